"""Anonymity, identity-preservation and attribute losses, and their gradients.

Loss functions broadcast over leading batch axes. :class:`LatentObjective`
composes them with a backend into the weighted total used by the optimizer,
returning gradients with respect to every latent code.
"""

from dataclasses import dataclass

import numpy as np

from latentmix.errors import ShapeError

UNIT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class LossWeights:
    anon: float = 10.0
    idp: float = 10.0
    attr: float = 0.15
    margin: float = 0.0

    def __post_init__(self):
        if min(self.anon, self.idp, self.attr) < 0:
            raise ValueError("loss weights must be nonnegative")
        if not -1.0 <= self.margin <= 1.0:
            raise ValueError("margin must lie in [-1, 1]")


@dataclass(frozen=True)
class LossBreakdown:
    anon: float
    idp: float
    attr: float
    total: float


def _require_unit(v, name):
    norms = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
        raise ValueError(f"{name} must be unit norm")


def anonymity_loss(e_p, e_r, margin=0.0):
    """``max(0, cos(e_p, e_r) - margin)`` for unit embeddings."""
    e_p = np.asarray(e_p, dtype=np.float64)
    e_r = np.asarray(e_r, dtype=np.float64)
    if e_p.shape[-1] != e_r.shape[-1]:
        raise ShapeError("anonymity_loss: embedding widths differ")
    _require_unit(e_p, "e_p")
    _require_unit(e_r, "e_r")
    cos = np.sum(e_p * e_r, axis=-1)
    return np.maximum(0.0, cos - margin)


def anonymity_grad(e_p, e_r, margin=0.0):
    """Gradient w.r.t. ``e_p``; zero on the flat side of the hinge, including the kink."""
    cos = np.sum(e_p * e_r, axis=-1, keepdims=True)
    return np.where(cos > margin, np.broadcast_to(e_r, np.shape(e_p)), 0.0)


def _pairs(n):
    return np.triu_indices(n, k=1)


def identity_preservation_loss(embeddings):
    """Sum of pairwise L2 distances over ``i < j``, divided by ``n (n - 1)``.

    ``embeddings`` has shape ``(..., n, k)``.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim < 2 or e.shape[-2] < 2:
        raise ValueError("identity preservation needs at least two embeddings")
    n = e.shape[-2]
    i, j = _pairs(n)
    dist = np.linalg.norm(e[..., i, :] - e[..., j, :], axis=-1)
    return dist.sum(axis=-1) / (n * (n - 1))


def identity_preservation_grad(embeddings):
    e = np.asarray(embeddings, dtype=np.float64)
    n = e.shape[-2]
    i, j = _pairs(n)
    diff = e[..., i, :] - e[..., j, :]
    dist = np.linalg.norm(diff, axis=-1, keepdims=True)
    unit = np.divide(diff, dist, out=np.zeros_like(diff), where=dist > 0)
    grad = np.zeros_like(e)
    for p in range(i.size):
        grad[..., i[p], :] += unit[..., p, :]
        grad[..., j[p], :] -= unit[..., p, :]
    return grad / (n * (n - 1))


def attribute_loss(a_p, a_r):
    a_p = np.asarray(a_p, dtype=np.float64)
    a_r = np.asarray(a_r, dtype=np.float64)
    if a_p.shape[-1] != a_r.shape[-1]:
        raise ShapeError("attribute_loss: dimension mismatch")
    return np.sum(np.abs(a_p - a_r), axis=-1)


def attribute_grad(a_p, a_r):
    return np.sign(np.asarray(a_p) - np.asarray(a_r))


def total_loss(anon, idp, attr, weights):
    total = weights.anon * anon + weights.idp * idp + weights.attr * attr
    return LossBreakdown(float(anon), float(idp), float(attr), float(total))


class LatentObjective:
    """Weighted total loss over a batch of subjects.

    Codes have shape ``(B, n, L*d)``: index 0 along the second axis is the
    primary protected code, the rest belong to augmentations. The identity
    term ranges over all ``n`` codes; anonymity and attribute terms use the
    primary code only.
    """

    def __init__(self, backend, faces, weights):
        faces = np.atleast_2d(np.asarray(faces, dtype=np.float64))
        self.backend = backend
        self.weights = weights
        z_r = backend.invert_flat(faces)
        self.e_r = backend.identity_forward(z_r)[0]
        self.a_r = backend.attribute_forward(z_r)

    def evaluate(self, codes, grad=True):
        """Return ``(parts, gradient)``; ``parts`` maps loss names to ``(B,)`` arrays."""
        b, w = self.backend, self.weights
        codes = np.asarray(codes, dtype=np.float64)
        if codes.ndim != 3 or codes.shape[0] != self.e_r.shape[0]:
            raise ShapeError(f"codes must be (B, n, L*d) with B={self.e_r.shape[0]}")
        n = codes.shape[1]

        x, gen_trace = b.generate_forward(codes)
        z_hat, inv_trace = b.invert_forward(x)
        e, id_trace = b.identity_forward(z_hat)
        a_p = b.attribute_forward(z_hat[:, 0])

        anon = anonymity_loss(e[:, 0], self.e_r, w.margin)
        idp = identity_preservation_loss(e) if n >= 2 else np.zeros(codes.shape[0])
        attr = attribute_loss(a_p, self.a_r)
        parts = {
            "anon": anon,
            "idp": idp,
            "attr": attr,
            "total": w.anon * anon + w.idp * idp + w.attr * attr,
        }
        if not grad:
            return parts, None

        g_e = np.zeros_like(e)
        if w.anon:
            g_e[:, 0] += w.anon * anonymity_grad(e[:, 0], self.e_r, w.margin)
        if w.idp and n >= 2:
            g_e += w.idp * identity_preservation_grad(e)
        g_z_hat = b.identity_backward(id_trace, g_e)
        if w.attr:
            g_z_hat[:, 0] += w.attr * b.attribute_backward(attribute_grad(a_p, self.a_r))
        g_x = b.invert_backward(inv_trace, g_z_hat)
        return parts, b.generate_backward(gen_trace, g_x)

    def breakdowns(self, codes):
        parts, _ = self.evaluate(codes, grad=False)
        return [
            LossBreakdown(float(parts["anon"][k]), float(parts["idp"][k]), float(parts["attr"][k]), float(parts["total"][k]))
            for k in range(parts["total"].shape[0])
        ]


def loss_grad_wrt_latents(objective, codes):
    """Gradient of the weighted total w.r.t. every code, shape ``(B, n, L*d)``."""
    return objective.evaluate(codes, grad=True)[1]
