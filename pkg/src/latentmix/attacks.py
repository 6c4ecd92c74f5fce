"""Irreversibility attacks on protected faces.

Two attackers, both white-box on the backend and holding the key:

* latent replacement: invert the protected face, put the key latent's mid
  band back in place of the protected one, regenerate;
* learned mapper: an affine protected-to-original map fitted by ridge
  regression on (protected, original) pairs.

Reconstructions are scored against the originals through the identity
matcher; protection succeeds on a reconstruction that does not match.
"""

from dataclasses import dataclass, field

import numpy as np

from latentmix.errors import NumericError, ShapeError
from latentmix.latent import LatentCode, mix_naive_flat
from latentmix.metrics import psr
from latentmix.pipeline import ProtectedTemplate

# reconstructions must stay strictly inside tanh's range to be invertible
CLIP = 1.0 - 1e-6


def latent_replacement_attack(template, z_f, backend):
    """Reconstruct ``generate(mix(invert(x_p), z_f))``.

    ``template`` is a :class:`ProtectedTemplate` or a face array (any leading
    batch shape); ``z_f`` is the key latent, a :class:`LatentCode` or flat
    array broadcastable against the inverted codes.
    """
    face = template.face if isinstance(template, ProtectedTemplate) else template
    face = np.asarray(face, dtype=np.float64)
    if isinstance(z_f, LatentCode):
        z_f = z_f.flatten()
    z_p = backend.invert_flat(face)
    z_hat = mix_naive_flat(z_p, np.asarray(z_f, dtype=np.float64), backend.bands, backend.dim)
    return backend.generate_flat(z_hat)


@dataclass
class LinearMapper:
    """Affine map ``y = x @ weight + bias`` fitted by ridge regression."""

    weight: np.ndarray
    bias: np.ndarray
    alpha: float

    def __call__(self, x):
        return apply_mapper(self, x)


def train_mapper(inputs, targets, alpha=1.0):
    """Closed-form ridge fit of ``targets`` from ``inputs`` (rows are samples).

    Both sides are centered first, so the intercept is not shrunk. Solves
    ``(Xc^T Xc + alpha I) W = Xc^T Yc``. With ``alpha == 0`` the system must
    be nonsingular, which needs more samples than input dimensions.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"train_mapper: inputs {x.shape}, targets {y.shape}")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    n, dim = x.shape
    if n < 2:
        raise ValueError("train_mapper needs at least two pairs")
    if alpha == 0 and n - 1 < dim:
        raise NumericError(
            f"ridge system is singular with alpha=0: {n} pairs for {dim} input dimensions (need {dim + 1})"
        )
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    gram = xc.T @ xc
    gram[np.diag_indices_from(gram)] += alpha
    try:
        weight = np.linalg.solve(gram, xc.T @ (y - mu_y))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"ridge system is singular: {exc}") from None
    if not np.all(np.isfinite(weight)):
        raise NumericError("ridge solution is not finite")
    return LinearMapper(weight, mu_y - mu_x @ weight, float(alpha))


def apply_mapper(mapper, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != mapper.weight.shape[0]:
        raise ShapeError(f"apply_mapper: input width {x.shape[-1]}, mapper expects {mapper.weight.shape[0]}")
    lead = x.shape[:-1]
    out = x.reshape(-1, x.shape[-1]) @ mapper.weight + mapper.bias
    return out.reshape(lead + (mapper.weight.shape[1],))


def mapper_attack(mapper, faces):
    """Mapper reconstructions, clipped into the generator's open range."""
    return np.clip(apply_mapper(mapper, faces), -CLIP, CLIP)


@dataclass
class AttackReport:
    name: str
    psr: dict
    mean_cosine: float
    scores: np.ndarray = field(repr=False, default=None)


def identity_scores(backend, reconstructions, originals):
    """Row-wise identity cosine between reconstructions and originals."""
    e_hat = backend.identity_embed(np.asarray(reconstructions, dtype=np.float64))
    e_r = backend.identity_embed(np.asarray(originals, dtype=np.float64))
    return np.clip(np.sum(e_hat * e_r, axis=-1), -1.0, 1.0)


def score_attack(name, backend, reconstructions, originals, thresholds):
    """PSR of reconstructions at each ``{fmr: threshold}`` entry."""
    scores = identity_scores(backend, reconstructions, originals)
    table = {fmr: psr(scores, t) for fmr, t in thresholds.items()}
    return AttackReport(name, table, float(np.mean(scores)), scores)


def invertibility_benchmark(originals, protected, key_latents, train_inputs, train_targets, backend, thresholds, alpha=1.0):
    """Run both attacks on ``protected`` faces and score them against ``originals``.

    ``key_latents`` holds the key latent per protected face (flat rows);
    the mapper is fitted on ``(train_inputs, train_targets)`` pairs.
    Returns ``{"latent_replacement": AttackReport, "mapper": AttackReport}``.
    """
    originals = np.asarray(originals, dtype=np.float64)
    protected = np.asarray(protected, dtype=np.float64)
    if originals.shape != protected.shape:
        raise ShapeError("invertibility_benchmark: originals and protected faces differ in shape")
    replaced = latent_replacement_attack(protected, key_latents, backend)
    mapper = train_mapper(train_inputs, train_targets, alpha)
    mapped = mapper_attack(mapper, protected)
    return {
        "latent_replacement": score_attack("latent_replacement", backend, replaced, originals, thresholds),
        "mapper": score_attack("mapper", backend, mapped, originals, thresholds),
    }
