"""Pluggable models: generator, encoder, identity embedder, attribute embedder.

:class:`ToyBackend` implements all four with closed-form parts so that each
property of the protection scheme can be checked exactly:

* generator  ``x = tanh(W z + b)`` with ``W`` full column rank, ``d_img >= L*d``;
* encoder    ``z = W_pinv (atanh(x) - b)``, the exact inverse on the range;
* identity   ``normalize(P_id mid(z) + leak * P_leak other(z))`` with ``z = E(x)``;
* attribute  ``P_attr other(z)``.

``other`` is the coarse band followed by the fine band. ``leak`` emulates
imperfect identity/attribute disentanglement; at ``leak = 0`` identity is a
function of the mid band alone.
"""

import struct
from typing import Protocol, runtime_checkable

import numpy as np

from latentmix import numcore
from latentmix.errors import FormatError, SaturationError, ShapeError
from latentmix.latent import BandSpec, LatentCode
from latentmix.prng import Stream, derive_seed

SATURATION_MARGIN = 1e-9
BLOB_MAGIC = b"FAMB"
BLOB_VERSION = 1


@runtime_checkable
class Generator(Protocol):
    def generate(self, z): ...

    def generator_vjp(self, z, upstream): ...


@runtime_checkable
class Encoder(Protocol):
    def invert(self, x): ...


@runtime_checkable
class IdentityEmbedder(Protocol):
    def identity_embed(self, x): ...

    def identity_vjp(self, x, upstream): ...


@runtime_checkable
class AttributeEmbedder(Protocol):
    def attribute_embed(self, x): ...

    def attribute_vjp(self, x, upstream): ...


class MappingNetwork:
    """Noise-to-latent MLP: orthogonal layers with standardized leaky-ReLU.

    Each hidden activation is shifted and scaled by its analytic mean and
    standard deviation under a standard normal input, so outputs stay
    zero-mean with unit variance per coordinate.
    """

    slope = 0.2

    def __init__(self, dim, stream, depth=2):
        self.in_dim = self.out_dim = dim
        self.weights = [_orthogonal(stream.child("layer", i), dim) for i in range(depth)]
        a = self.slope
        self._mean = (1.0 - a) / np.sqrt(2.0 * np.pi)
        self._std = np.sqrt((1.0 + a * a) / 2.0 - self._mean**2)

    def __call__(self, base):
        h = np.asarray(base, dtype=np.float64)
        for w in self.weights[:-1]:
            h = h @ w.T
            h = (np.where(h > 0, h, self.slope * h) - self._mean) / self._std
        return h @ self.weights[-1].T


def _orthogonal(stream, n):
    q, r = np.linalg.qr(stream.normal((n, n)))
    return q * np.sign(np.diag(r))


def _orthonormal_draw(stream, rows, cols, attempts=8):
    if rows > cols:
        raise ShapeError(f"cannot draw {rows} orthonormal rows in {cols} dimensions")
    for attempt in range(attempts):
        try:
            return numcore.orthonormal_rows(stream.child("draw", attempt).normal((rows, cols)))
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("repeated rank-deficient draws")


class ToyBackend:
    """Deterministic stand-in for generator + encoder + embedders.

    All parameters derive from ``seed``. Array methods (``*_flat`` and the
    forward/VJP pairs) accept any leading batch dimensions.
    """

    def __init__(
        self,
        n_layers=18,
        dim=64,
        image_dim=None,
        identity_dim=32,
        attribute_dim=32,
        leak=0.2,
        bands=None,
        seed=42,
    ):
        self.n_layers = int(n_layers)
        self.dim = int(dim)
        self.latent_size = self.n_layers * self.dim
        self.image_dim = int(image_dim) if image_dim else 2 * self.latent_size
        self.identity_dim = int(identity_dim)
        self.attribute_dim = int(attribute_dim)
        self.leak = float(leak)
        self.bands = (bands or BandSpec.default(self.n_layers)).validate(self.n_layers)
        self.seed = int(seed)
        if self.image_dim < self.latent_size:
            raise ShapeError("image_dim must be at least L*d for an exact encoder")
        if not 0.0 <= self.leak < 1.0:
            raise ValueError("leak must lie in [0, 1)")

        root = Stream(derive_seed("toy-backend", self.seed))
        n = self.latent_size
        u, _ = np.linalg.qr(root.child("gen-u").normal((self.image_dim, n)))
        v = _orthogonal(root.child("gen-v"), n)
        s = 0.5 + root.child("gen-s").uniform(n)
        self.w_gen = (u * s) @ v.T
        self.w_pinv = (v / s) @ u.T
        self.b_gen = 0.1 * root.child("gen-b").normal(self.image_dim)

        self.mid_cols = self.bands.mid_columns(self.dim)
        self.other_cols = self.bands.other_columns(self.dim)
        self.p_id = _orthonormal_draw(root.child("p-id"), self.identity_dim, self.mid_cols.size)
        self.p_leak = _orthonormal_draw(root.child("p-leak"), self.identity_dim, self.other_cols.size)
        self.p_attr = _orthonormal_draw(root.child("p-attr"), self.attribute_dim, self.other_cols.size)
        self.mapper = MappingNetwork(self.dim, root.child("mapping"))

    # -- array-level forward / VJP pairs -------------------------------------

    def _check_latent(self, z):
        if z.shape[-1] != self.latent_size:
            raise ShapeError(f"latent width {z.shape[-1]}, backend expects {self.latent_size}")

    def _check_face(self, x):
        if x.shape[-1] != self.image_dim:
            raise ShapeError(f"face width {x.shape[-1]}, backend expects {self.image_dim}")
        if not np.all(np.isfinite(x)):
            raise SaturationError("face vector has non-finite entries")
        if np.any(np.abs(x) >= 1.0 - SATURATION_MARGIN):
            raise SaturationError("face vector is saturated; atanh undefined")

    def generate_forward(self, z):
        self._check_latent(z)
        return numcore.affine_tanh(self.w_gen, self.b_gen, z)

    def generate_backward(self, trace, upstream):
        return numcore.affine_tanh_vjp(trace, upstream)

    def invert_forward(self, x):
        self._check_face(x)
        return numcore.atanh_affine(self.w_pinv, self.b_gen, x)

    def invert_backward(self, trace, upstream):
        return numcore.atanh_affine_vjp(trace, upstream)

    def identity_forward(self, z):
        """Identity embedding of an (already inverted) latent."""
        u = z[..., self.mid_cols] @ self.p_id.T
        if self.leak:
            u = u + self.leak * (z[..., self.other_cols] @ self.p_leak.T)
        return numcore.normalize(u)

    def identity_backward(self, trace, upstream):
        gu = numcore.normalize_vjp(trace, upstream)
        gz = np.zeros(gu.shape[:-1] + (self.latent_size,))
        gz[..., self.mid_cols] = gu @ self.p_id
        if self.leak:
            gz[..., self.other_cols] = self.leak * (gu @ self.p_leak)
        return gz

    def attribute_forward(self, z):
        return z[..., self.other_cols] @ self.p_attr.T

    def attribute_backward(self, upstream):
        gz = np.zeros(upstream.shape[:-1] + (self.latent_size,))
        gz[..., self.other_cols] = upstream @ self.p_attr
        return gz

    def generate_flat(self, z):
        return self.generate_forward(np.asarray(z, dtype=np.float64))[0]

    def invert_flat(self, x):
        return self.invert_forward(np.asarray(x, dtype=np.float64))[0]

    # -- object-level API ---------------------------------------------------

    def generate(self, z):
        if isinstance(z, LatentCode):
            if z.shape != (self.n_layers, self.dim):
                raise ShapeError(f"latent {z.shape}, backend expects {(self.n_layers, self.dim)}")
            z = z.flatten()
        return self.generate_flat(z)

    def invert(self, x):
        z = self.invert_flat(x)
        if z.ndim == 1:
            return LatentCode(z.reshape(self.n_layers, self.dim))
        return z

    def identity_embed(self, x):
        return self.identity_forward(self.invert_flat(x))[0]

    def attribute_embed(self, x):
        return self.attribute_forward(self.invert_flat(x))

    def generator_vjp(self, z, upstream):
        """Gradient w.r.t. the flat latent of ``<upstream, generate(z)>``."""
        if isinstance(z, LatentCode):
            z = z.flatten()
        _, trace = self.generate_forward(np.asarray(z, dtype=np.float64))
        return self.generate_backward(trace, np.asarray(upstream, dtype=np.float64))

    def encoder_vjp(self, x, upstream):
        _, trace = self.invert_forward(np.asarray(x, dtype=np.float64))
        return self.invert_backward(trace, np.asarray(upstream, dtype=np.float64))

    def identity_vjp(self, x, upstream):
        """Gradient w.r.t. the face of ``<upstream, identity_embed(x)>``."""
        z, inv_trace = self.invert_forward(np.asarray(x, dtype=np.float64))
        _, id_trace = self.identity_forward(z)
        gz = self.identity_backward(id_trace, np.asarray(upstream, dtype=np.float64))
        return self.invert_backward(inv_trace, gz)

    def attribute_vjp(self, x, upstream):
        _, inv_trace = self.invert_forward(np.asarray(x, dtype=np.float64))
        gz = self.attribute_backward(np.asarray(upstream, dtype=np.float64))
        return self.invert_backward(inv_trace, gz)

    # -- persistence --------------------------------------------------------

    def to_blob(self):
        """Recipe blob: magic, version, seed and dims. Parameters are re-derived on load."""
        head = struct.pack(
            "<4sHQ5Id",
            BLOB_MAGIC,
            BLOB_VERSION,
            self.seed & 0xFFFFFFFFFFFFFFFF,
            self.n_layers,
            self.dim,
            self.image_dim,
            self.identity_dim,
            self.attribute_dim,
            self.leak,
        )
        b = self.bands
        return head + struct.pack("<6I", *b.coarse, *b.mid, *b.fine)

    @classmethod
    def from_blob(cls, blob):
        fmt = "<4sHQ5Id"
        size = struct.calcsize(fmt)
        if len(blob) != size + 24:
            raise FormatError("backend blob has the wrong length")
        magic, version, seed, n_layers, dim, image_dim, id_dim, attr_dim, leak = struct.unpack(fmt, blob[:size])
        if magic != BLOB_MAGIC or version != BLOB_VERSION:
            raise FormatError("not a backend blob (bad magic or version)")
        c0, c1, m0, m1, f0, f1 = struct.unpack("<6I", blob[size:])
        bands = BandSpec((c0, c1), (m0, m1), (f0, f1))
        return cls(n_layers, dim, image_dim, id_dim, attr_dim, leak, bands, seed)

    def __repr__(self):
        return (
            f"ToyBackend(L={self.n_layers}, d={self.dim}, d_img={self.image_dim}, "
            f"d_I={self.identity_dim}, d_A={self.attribute_dim}, leak={self.leak}, seed={self.seed})"
        )
