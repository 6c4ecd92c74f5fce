import itertools

import numpy as np
import pytest

from latentmix.errors import ShapeError
from latentmix.losses import (
    LatentObjective,
    LossWeights,
    anonymity_grad,
    anonymity_loss,
    attribute_grad,
    attribute_loss,
    identity_preservation_grad,
    identity_preservation_loss,
    loss_grad_wrt_latents,
    total_loss,
)
from latentmix.numcore import normalize, normalize_vjp

from conftest import random_latents


def unit(rng, shape):
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_anonymity_values():
    e = np.array([1.0, 0.0])
    assert anonymity_loss(e, e) == 1.0
    assert anonymity_loss(e, -e) == 0.0
    assert anonymity_loss(e, np.array([0.0, 1.0])) == 0.0
    assert anonymity_loss(e, e, margin=0.3) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        anonymity_loss(np.array([2.0, 0.0]), e)


def test_anonymity_gradient_zero_at_and_below_kink():
    e_r = np.array([1.0, 0.0])
    e_p = np.array([0.0, 1.0])  # cos == margin == 0
    assert np.all(anonymity_grad(e_p, e_r) == 0.0)
    assert np.array_equal(anonymity_grad(e_r, e_r), e_r)


def test_identity_preservation_brute_force(rng):
    for n in (2, 3, 6):
        e = rng.standard_normal((n, 4))
        brute = sum(np.linalg.norm(e[i] - e[j]) for i, j in itertools.combinations(range(n), 2)) / (n * (n - 1))
        assert identity_preservation_loss(e) == pytest.approx(brute, rel=1e-12)
    assert identity_preservation_loss(np.ones((3, 4))) == 0.0
    assert np.all(identity_preservation_grad(np.ones((3, 4))) == 0.0)
    with pytest.raises(ValueError):
        identity_preservation_loss(np.ones((1, 4)))


def test_attribute_loss_is_l1(rng):
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    assert attribute_loss(a, b) == pytest.approx(np.abs(a - b).sum())
    assert np.array_equal(attribute_grad(a, b), np.sign(a - b))
    with pytest.raises(ShapeError):
        attribute_loss(np.ones(3), np.ones(4))


def test_total_loss_weighting():
    b = total_loss(0.5, 0.2, 4.0, LossWeights())
    assert b.total == pytest.approx(10 * 0.5 + 10 * 0.2 + 0.15 * 4.0)
    with pytest.raises(ValueError):
        LossWeights(anon=-1)
    with pytest.raises(ValueError):
        LossWeights(margin=2)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def _check_fd(f, grad, x, h=1e-6):
    g_fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g_fd[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return _rel(grad, g_fd)


def test_loss_gradients_finite_differences(rng):
    for _ in range(20):
        # anonymity through normalization, away from the hinge kink
        u, e_r = rng.standard_normal(6), unit(rng, 6)
        e, tr = normalize(u)
        if abs(e @ e_r) < 1e-3:
            continue
        g = normalize_vjp(tr, anonymity_grad(e, e_r))
        assert _check_fd(lambda v: float(anonymity_loss(v / np.linalg.norm(v), e_r)), g, u) < 1e-6 or np.all(g == 0)

        emb = rng.standard_normal((4, 5))
        assert _check_fd(lambda v: float(identity_preservation_loss(v)), identity_preservation_grad(emb), emb) < 1e-6

        a, b = rng.standard_normal(5), rng.standard_normal(5)
        assert _check_fd(lambda v: float(attribute_loss(v, b)), attribute_grad(a, b), a) < 1e-6


def test_objective_gradient_finite_differences(backend, rng):
    faces = backend.generate_flat(random_latents(backend, rng, (2,)))
    obj = LatentObjective(backend, faces, LossWeights(margin=-0.5))  # negative margin keeps the hinge active
    codes = random_latents(backend, rng, (2, 3))
    parts, g = obj.evaluate(codes)
    assert set(parts) == {"anon", "idp", "attr", "total"}
    assert g.shape == codes.shape
    assert np.array_equal(loss_grad_wrt_latents(obj, codes), g)
    rel = _check_fd(lambda c: float(obj.evaluate(c, grad=False)[0]["total"].sum()), g, codes)
    assert rel < 1e-5


def test_objective_shape_check(backend, rng):
    obj = LatentObjective(backend, backend.generate_flat(random_latents(backend, rng, (2,))), LossWeights())
    with pytest.raises(ShapeError):
        obj.evaluate(np.zeros((3, 2, backend.latent_size)))
    assert len(obj.breakdowns(random_latents(backend, rng, (2, 3)))) == 2
