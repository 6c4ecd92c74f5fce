import numpy as np
import pytest

from latentmix.errors import NumericError, ShapeError
from latentmix.losses import LatentObjective, LossWeights
from latentmix.optimize import AdamState, OptimizerSettings, SGDState, adam_step, refine, refine_batch, sgd_step

from conftest import random_latents


def test_adam_first_step_is_signed_lr():
    # with bias correction the first update is lr * g / (|g| + eps)
    state = AdamState(lr=0.1)
    out = adam_step(state, np.array([1.0, -2.0, 0.0]), np.array([0.5, -3.0, 0.0]))
    np.testing.assert_allclose(out, [0.9, -1.9, 0.0], atol=1e-7)
    assert state.t == 1


def test_adam_two_steps_hand_computed():
    state = AdamState(lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
    p = np.array([1.0])
    p = adam_step(state, p, np.array([2.0]))
    p = adam_step(state, p, np.array([1.0]))
    m = 0.9 * (0.1 * 2.0) + 0.1 * 1.0
    v = 0.999 * (0.001 * 4.0) + 0.001 * 1.0
    m_hat, v_hat = m / (1 - 0.9**2), v / (1 - 0.999**2)
    expected = 1.0 - 0.01 * 2.0 / (2.0 + 1e-8) - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert p[0] == pytest.approx(expected, abs=1e-12)


def test_adam_minimizes_quadratic():
    state = AdamState(lr=0.05)
    p = np.array([3.0, -2.0])
    for _ in range(2000):
        p = adam_step(state, p, 2 * p)
    assert np.all(np.abs(p) < 1e-2)


def test_adam_shape_errors():
    state = AdamState()
    with pytest.raises(ShapeError):
        adam_step(state, np.zeros(2), np.zeros(3))
    adam_step(state, np.zeros(2), np.zeros(2))
    with pytest.raises(ShapeError):
        adam_step(state, np.zeros(3), np.zeros(3))


def test_sgd_step():
    assert np.array_equal(sgd_step(SGDState(lr=0.5), np.array([1.0]), np.array([2.0])), [0.0])
    s = OptimizerSettings(name="sgd", lr=0.5)
    assert isinstance(s.new_state(), SGDState)
    with pytest.raises(ValueError):
        OptimizerSettings(name="rmsprop")


def test_refine_records_history_and_reduces_loss(backend, rng):
    faces = backend.generate_flat(random_latents(backend, rng, (3,)))
    obj = LatentObjective(backend, faces, LossWeights())
    codes = random_latents(backend, rng, (3, 3))
    z, trace = refine_batch(codes, obj, OptimizerSettings(steps=30, lr=0.02))
    assert len(trace) == 30 and len(trace.final) == 3
    assert all(trace.final[k].total < trace.history[0][k].total for k in range(3))
    assert trace.dump(0).count("\n") == 30
    assert not np.array_equal(z, codes)


def test_refine_single_subject(backend, rng):
    face = backend.generate_flat(random_latents(backend, rng))
    obj = LatentObjective(backend, face, LossWeights())
    z_p = random_latents(backend, rng)
    z_p2, z_aug2, trace = refine(z_p, [random_latents(backend, rng)], obj, OptimizerSettings(steps=3))
    assert z_p2.shape == z_p.shape and len(z_aug2) == 1 and len(trace) == 3


class _Exploding:
    def evaluate(self, codes, grad=True):
        b = codes.shape[0]
        total = np.full(b, np.nan) if np.abs(codes).max() > 1.015 else np.ones(b)
        parts = {"anon": total, "idp": total, "attr": total, "total": total}
        return parts, (-np.ones_like(codes) if grad else None)


def test_non_finite_loss_names_step():
    with pytest.raises(NumericError) as info:
        refine_batch(np.ones((2, 1, 3)), _Exploding(), OptimizerSettings(name="sgd", lr=0.01, steps=5))
    assert info.value.step == 3
    assert "step 3" in str(info.value)
