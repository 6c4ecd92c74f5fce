"""Layer-structured latent codes, band decomposition and naive mixing.

A code is ``L`` layers of ``d`` values. Layers split into three contiguous
bands: coarse (global structure), mid (identity) and fine (detail). The
default split for 18 layers is 0-2 / 3-7 / 8-17.

Flattening is layer-major: layer 0's ``d`` values, then layer 1's, and so on.
"""

from dataclasses import dataclass

import numpy as np

from latentmix.errors import ShapeError


@dataclass(frozen=True)
class BandSpec:
    """Half-open ``(start, stop)`` layer ranges for the three bands."""

    coarse: tuple
    mid: tuple
    fine: tuple

    @classmethod
    def default(cls, n_layers=18):
        if n_layers == 18:
            return cls((0, 3), (3, 8), (8, 18))
        # same proportions as the 18-layer split, each band at least one layer
        c = max(1, round(3 * n_layers / 18))
        m = max(1, round(5 * n_layers / 18))
        if c + m >= n_layers:
            c, m = 1, 1
        return cls((0, c), (c, c + m), (c + m, n_layers))

    @classmethod
    def parse(cls, text):
        """Parse inclusive ranges, e.g. ``"0-2,3-7,8-17"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"band spec needs three ranges, got {text!r}")
        ranges = []
        for p in parts:
            lo, sep, hi = p.partition("-")
            lo = int(lo)
            hi = int(hi) if sep else lo
            ranges.append((lo, hi + 1))
        return cls(*ranges)

    def format(self):
        return ",".join(f"{a}-{b - 1}" for a, b in (self.coarse, self.mid, self.fine))

    @property
    def n_layers(self):
        return self.fine[1]

    def validate(self, n_layers):
        (c0, c1), (m0, m1), (f0, f1) = self.coarse, self.mid, self.fine
        if not (c0 == 0 and c0 < c1 == m0 < m1 == f0 < f1 == n_layers):
            raise ShapeError(f"bands {self.format()} do not partition {n_layers} layers")
        return self

    def mid_layers(self):
        return np.arange(*self.mid)

    def other_layers(self):
        return np.concatenate([np.arange(*self.coarse), np.arange(*self.fine)])

    def mid_columns(self, d):
        """Flat indices of the mid band in a layer-major vector."""
        return np.arange(self.mid[0] * d, self.mid[1] * d)

    def other_columns(self, d):
        return np.concatenate(
            [np.arange(self.coarse[0] * d, self.coarse[1] * d), np.arange(self.fine[0] * d, self.fine[1] * d)]
        )


class LatentCode:
    """Immutable ``(L, d)`` float64 array of per-layer latent vectors."""

    __slots__ = ("_layers",)

    def __init__(self, layers):
        arr = np.array(layers, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ShapeError(f"latent code must be 2-D (layers, dim), got {arr.shape}")
        if arr.shape[0] < 3:
            raise ShapeError("latent code needs at least 3 layers")
        arr.setflags(write=False)
        self._layers = arr

    @property
    def layers(self):
        return self._layers

    @property
    def shape(self):
        return self._layers.shape

    @property
    def n_layers(self):
        return self._layers.shape[0]

    @property
    def dim(self):
        return self._layers.shape[1]

    def flatten(self):
        return self._layers.reshape(-1).copy()

    @classmethod
    def zeros(cls, n_layers, dim):
        return cls(np.zeros((n_layers, dim)))

    def __eq__(self, other):
        if not isinstance(other, LatentCode):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._layers, other._layers)

    def __hash__(self):
        return hash((self.shape, self._layers.tobytes()))

    def __repr__(self):
        return f"LatentCode(L={self.n_layers}, d={self.dim})"


def flatten(z):
    return z.flatten()


def unflatten(v, n_layers, dim):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != n_layers * dim:
        raise ShapeError(f"cannot unflatten {v.shape} into ({n_layers}, {dim})")
    return LatentCode(v.reshape(n_layers, dim))


def decompose(z, bands):
    """Return copies of the (coarse, mid, fine) layer slices."""
    bands.validate(z.n_layers)
    return tuple(z.layers[a:b].copy() for a, b in (bands.coarse, bands.mid, bands.fine))


def compose(coarse, mid, fine):
    return LatentCode(np.concatenate([coarse, mid, fine], axis=0))


def mix_naive(z_r, z_f, bands):
    """Keep ``z_r``'s coarse and fine bands; take the mid band from ``z_f``."""
    if z_r.shape != z_f.shape:
        raise ShapeError(f"mix_naive: {z_r.shape} vs {z_f.shape}")
    bands.validate(z_r.n_layers)
    out = np.array(z_r.layers, copy=True)
    a, b = bands.mid
    out[a:b] = z_f.layers[a:b]
    return LatentCode(out)


def mix_naive_flat(z_r, z_f, bands, dim):
    """Array form of :func:`mix_naive` over the last axis (broadcasts ``z_f``)."""
    cols = bands.mid_columns(dim)
    out = np.array(np.broadcast_to(z_r, np.broadcast_shapes(np.shape(z_r), np.shape(z_f))), copy=True)
    out[..., cols] = np.broadcast_to(z_f, out.shape)[..., cols]
    return out
