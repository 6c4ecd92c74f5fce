"""Dense float64 arithmetic and hand-written vector-Jacobian products.

Vectors and matrices are plain ``numpy.ndarray`` values of dtype float64.
The network pieces used by the backends are fixed and small, so each one
gets its own forward function returning a :class:`DualTrace`, plus a VJP
that replays the trace. Functions that take a batch accept arbitrary
leading dimensions; the last axis is the feature axis.
"""

import numpy as np

from latentmix.errors import ShapeError, StaleTraceError


def as_vector(v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {v.shape}")
    return v


def as_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {m.shape}")
    return m


def matvec(m, v):
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: {m.shape} x {v.shape}")
    return m @ v


def cosine(u, v):
    u = as_vector(u)
    v = as_vector(v)
    if u.shape != v.shape:
        raise ShapeError(f"cosine: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine of a zero-norm vector is undefined")
    return float(np.clip(np.dot(u / nu, v / nv), -1.0, 1.0))


class DualTrace:
    """Forward intermediates of one computation, tied to the input it saw.

    The trace snapshots its input. If the caller mutates that array in place
    (the optimizer does) and then replays the trace, :meth:`check` raises.
    """

    __slots__ = ("source", "_snapshot", "saved")

    def __init__(self, source, **saved):
        self.source = source
        self._snapshot = np.array(source, copy=True)
        self.saved = saved

    def check(self):
        if self.source.shape != self._snapshot.shape or not np.array_equal(
            self.source, self._snapshot
        ):
            raise StaleTraceError("inputs changed since this trace was recorded")

    def __getitem__(self, name):
        return self.saved[name]


def _right_mul(x, m):
    """``x @ m`` with leading axes folded into one GEMM (stacked matmul is far slower)."""
    lead = x.shape[:-1]
    return (x.reshape(-1, x.shape[-1]) @ m).reshape(lead + (m.shape[-1],))


def affine_tanh(w, b, x):
    """``tanh(W x + b)`` over the last axis of ``x``."""
    if x.shape[-1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"affine_tanh: W{w.shape} b{b.shape} x{x.shape}")
    y = np.tanh(_right_mul(x, w.T) + b)
    return y, DualTrace(x, w=w, y=y)


def affine_tanh_vjp(trace, upstream):
    trace.check()
    y = trace["y"]
    if upstream.shape != y.shape:
        raise ShapeError(f"affine_tanh_vjp: upstream {upstream.shape}, output {y.shape}")
    return _right_mul(upstream * (1.0 - y * y), trace["w"])


def vjp_affine_tanh(w, b, x, upstream):
    """Gradient w.r.t. ``x`` of ``<upstream, tanh(W x + b)>``."""
    w = as_matrix(w)
    _, trace = affine_tanh(w, np.asarray(b, dtype=np.float64), np.asarray(x, dtype=np.float64))
    return affine_tanh_vjp(trace, np.asarray(upstream, dtype=np.float64))


def atanh_affine(w_pinv, b, y):
    """``W_pinv (atanh(y) - b)``: the exact inverse of :func:`affine_tanh` on its range."""
    if y.shape[-1] != w_pinv.shape[1] or b.shape != (w_pinv.shape[1],):
        raise ShapeError(f"atanh_affine: Wp{w_pinv.shape} b{b.shape} y{y.shape}")
    z = _right_mul(np.arctanh(y) - b, w_pinv.T)
    return z, DualTrace(y, w=w_pinv, y=y)


def atanh_affine_vjp(trace, upstream):
    trace.check()
    y = trace["y"]
    return _right_mul(upstream, trace["w"]) / (1.0 - y * y)


def normalize(u):
    """Unit-normalize along the last axis. Refuses zero vectors."""
    norm = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("cannot normalize a zero vector")
    e = u / norm
    return e, DualTrace(u, e=e, norm=norm)


def normalize_vjp(trace, upstream):
    trace.check()
    e = trace["e"]
    radial = np.sum(e * upstream, axis=-1, keepdims=True)
    return (upstream - e * radial) / trace["norm"]


def orthonormal_rows(a, tol=1e-10):
    """Modified Gram-Schmidt over the rows of ``a``.

    Raises ``np.linalg.LinAlgError`` when a row is (numerically) dependent on
    the earlier ones; callers re-draw.
    """
    q = np.array(a, dtype=np.float64, copy=True)
    for i in range(q.shape[0]):
        for j in range(i):
            q[i] -= np.dot(q[j], q[i]) * q[j]
        n = np.linalg.norm(q[i])
        if n < tol * max(1.0, np.linalg.norm(a[i])):
            raise np.linalg.LinAlgError(f"row {i} is linearly dependent")
        q[i] /= n
    return q
