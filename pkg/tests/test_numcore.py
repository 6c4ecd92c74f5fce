import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentmix import numcore
from latentmix.errors import ShapeError, StaleTraceError


def triple_loop_matvec(m, v):
    out = [0.0] * len(m)
    for i, row in enumerate(m):
        for j, x in enumerate(row):
            out[i] += x * v[j]
    return np.array(out)


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_matvec_matches_loop_oracle(rng):
    for _ in range(20):
        m = rng.standard_normal((7, 5))
        v = rng.standard_normal(5)
        np.testing.assert_allclose(numcore.matvec(m, v), triple_loop_matvec(m.tolist(), v.tolist()), atol=1e-12)


def test_matvec_shape_errors():
    with pytest.raises(ShapeError):
        numcore.matvec(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ShapeError):
        numcore.matvec(np.ones(3), np.ones(3))


def test_cosine_basics():
    assert numcore.cosine([1, 0], [0, 2]) == 0.0
    assert numcore.cosine([1, 1], [2, 2]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        numcore.cosine([0, 0], [1, 0])
    with pytest.raises(ShapeError):
        numcore.cosine([1, 0], [1, 0, 0])


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)),
    arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)),
)
def test_cosine_bounded_and_symmetric(u, v):
    if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
        return
    c = numcore.cosine(u, v)
    assert -1.0 <= c <= 1.0
    assert c == pytest.approx(numcore.cosine(v, u), abs=1e-12)


def test_right_mul_equals_matmul(rng):
    x = rng.standard_normal((3, 4, 5))
    m = rng.standard_normal((5, 2))
    np.testing.assert_allclose(numcore._right_mul(x, m), x @ m, atol=1e-12)


def test_affine_tanh_vjp_matches_finite_differences(rng):
    w = rng.standard_normal((6, 4)) * 0.5
    b = rng.standard_normal(6) * 0.1
    x = rng.standard_normal(4)
    up = rng.standard_normal(6)
    g = numcore.vjp_affine_tanh(w, b, x, up)
    fd = central_diff(lambda v: up @ np.tanh(w @ v + b), x)
    np.testing.assert_allclose(g, fd, rtol=1e-7, atol=1e-9)


def test_atanh_affine_inverts_affine_tanh(rng):
    q, _ = np.linalg.qr(rng.standard_normal((8, 4)))
    s = np.array([0.5, 0.9, 1.2, 1.4])
    v, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    w = (q * s) @ v.T
    w_pinv = (v / s) @ q.T
    b = 0.1 * rng.standard_normal(8)
    z = rng.standard_normal((3, 4)) * 0.5
    y, _ = numcore.affine_tanh(w, b, z)
    z_back, trace = numcore.atanh_affine(w_pinv, b, y)
    np.testing.assert_allclose(z_back, z, atol=1e-12)
    up = rng.standard_normal(4)
    g = numcore.atanh_affine_vjp(trace, np.broadcast_to(up, (3, 4)))
    fd = central_diff(lambda yy: up @ (w_pinv @ (np.arctanh(yy) - b)), y[0])
    np.testing.assert_allclose(g[0], fd, rtol=1e-6, atol=1e-8)


def test_normalize_and_vjp(rng):
    u = rng.standard_normal(5)
    e, trace = numcore.normalize(u)
    assert np.linalg.norm(e) == pytest.approx(1.0)
    up = rng.standard_normal(5)
    fd = central_diff(lambda x: up @ (x / np.linalg.norm(x)), u)
    np.testing.assert_allclose(numcore.normalize_vjp(trace, up), fd, rtol=1e-7, atol=1e-9)
    with pytest.raises(ValueError):
        numcore.normalize(np.zeros(3))


def test_stale_trace_detected(rng):
    x = rng.standard_normal(4)
    _, trace = numcore.affine_tanh(np.eye(4), np.zeros(4), x)
    x[0] += 1.0
    with pytest.raises(StaleTraceError):
        numcore.affine_tanh_vjp(trace, np.ones(4))


def test_affine_tanh_shape_check():
    with pytest.raises(ShapeError):
        numcore.affine_tanh(np.eye(3), np.zeros(3), np.ones(4))


def test_orthonormal_rows(rng):
    q = numcore.orthonormal_rows(rng.standard_normal((4, 9)))
    np.testing.assert_allclose(q @ q.T, np.eye(4), atol=1e-12)
    a = rng.standard_normal((3, 5))
    a[2] = a[0] + 2 * a[1]
    with pytest.raises(np.linalg.LinAlgError):
        numcore.orthonormal_rows(a)
