"""Adam (and plain SGD) over latent codes, and the fixed-length refinement loop."""

from dataclasses import dataclass, field

import numpy as np

from latentmix.errors import NumericError, SaturationError, ShapeError
from latentmix.losses import LossBreakdown


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0


def adam_step(state, params, grad):
    """One bias-corrected Adam update; returns new params, advances ``state``."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ShapeError(f"adam_step: params {params.shape} vs grad {grad.shape}")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    elif state.m.shape != params.shape:
        raise ShapeError("adam_step: state was built for a different parameter shape")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class SGDState:
    lr: float = 0.01
    t: int = 0


def sgd_step(state, params, grad):
    params = np.asarray(params, dtype=np.float64)
    if params.shape != np.shape(grad):
        raise ShapeError("sgd_step: shape mismatch")
    state.t += 1
    return params - state.lr * np.asarray(grad)


@dataclass(frozen=True)
class OptimizerSettings:
    name: str = "adam"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 50

    def __post_init__(self):
        if self.name not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.name!r}")
        if self.steps < 0 or self.lr <= 0:
            raise ValueError("steps must be >= 0 and lr > 0")

    def new_state(self):
        if self.name == "adam":
            return AdamState(self.lr, self.beta1, self.beta2, self.eps)
        return SGDState(self.lr)

    def step(self, state, params, grad):
        if self.name == "adam":
            return adam_step(state, params, grad)
        return sgd_step(state, params, grad)


@dataclass
class OptTrace:
    """Per-step loss history, recorded before each update.

    ``history[t]`` holds one :class:`LossBreakdown` per subject in the batch;
    ``final`` holds the losses after the last update.
    """

    history: list = field(default_factory=list)
    final: list = field(default_factory=list)

    def __len__(self):
        return len(self.history)

    def subject(self, k):
        return [step[k] for step in self.history]

    def dump(self, k=0):
        """One line per step: index and the four loss values, fixed decimals."""
        return "".join(
            f"{t:4d} {b.anon:.10f} {b.idp:.10f} {b.attr:.10f} {b.total:.10f}\n"
            for t, b in enumerate(self.subject(k), 1)
        )


def refine_batch(codes, objective, settings):
    """Run ``settings.steps`` synchronous updates on codes of shape ``(B, n, L*d)``.

    Every code of every subject has its own moments (the moment arrays share
    the codes' shape). Raises :class:`NumericError` naming the step index when
    any subject's loss goes non-finite or a code drives the generator into
    saturation.
    """
    z = np.array(codes, dtype=np.float64, copy=True)
    state = settings.new_state()
    trace = OptTrace()
    for t in range(1, settings.steps + 1):
        try:
            parts, grad = objective.evaluate(z)
        except SaturationError as exc:
            raise NumericError(f"generator saturated at step {t}: {exc}", step=t) from exc
        total = parts["total"]
        bad = ~np.isfinite(total) | ~np.all(np.isfinite(grad), axis=(1, 2))
        if np.any(bad):
            raise NumericError(
                f"non-finite loss at step {t} for batch item(s) {np.flatnonzero(bad).tolist()}", step=t
            )
        trace.history.append(_breakdowns(parts))
        z = settings.step(state, z, grad)
    trace.final = _breakdowns(objective.evaluate(z, grad=False)[0])
    return z, trace


def _breakdowns(parts):
    return [
        LossBreakdown(float(parts["anon"][k]), float(parts["idp"][k]), float(parts["attr"][k]), float(parts["total"][k]))
        for k in range(parts["total"].shape[0])
    ]


def refine(z_p, z_aug, objective, settings):
    """Single-subject refinement: primary code plus augmentation codes.

    ``z_p`` and each entry of ``z_aug`` are flat latent vectors. Returns the
    refined primary code, refined augmentation codes and the trace.
    """
    codes = np.stack([np.asarray(z_p)] + [np.asarray(z) for z in z_aug])[None]
    out, trace = refine_batch(codes, objective, settings)
    return out[0, 0], list(out[0, 1:]), trace
