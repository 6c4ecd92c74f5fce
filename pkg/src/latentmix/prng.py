"""Seeded, splittable random streams.

Algorithm ``pcg64-bm-v1`` (pinned so persisted artifacts stay reproducible):

* seeds are 64-bit integers; a child stream's seed is the first 8 bytes
  (little endian) of SHA-256 over the length-prefixed parent seed and labels;
* raw bits come from numpy's PCG64 bit generator initialised with that seed;
* uniforms are ``((raw >> 11) + 1) * 2**-53`` which lies in (0, 1];
* normals are Box-Muller pairs ``r*cos(t), r*sin(t)``, interleaved.

Only the bit generator is borrowed from numpy, never its distribution code,
whose output streams are not covered by numpy's compatibility policy.
"""

import hashlib

import numpy as np

ALGORITHM = "pcg64-bm-v1"


def _encode(part):
    if isinstance(part, (bytes, bytearray)):
        return bytes(part)
    if isinstance(part, (int, np.integer)):
        return int(part).to_bytes(16, "little", signed=True)
    return str(part).encode("utf-8")


def derive_seed(*parts):
    """Hash an ordered tuple of labels into a 64-bit seed."""
    h = hashlib.sha256(ALGORITHM.encode())
    for part in parts:
        b = _encode(part)
        h.update(len(b).to_bytes(4, "little"))
        h.update(b)
    return int.from_bytes(h.digest()[:8], "little")


class Stream:
    def __init__(self, seed):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._bits = np.random.PCG64(self.seed)

    def child(self, *labels):
        return Stream(derive_seed(self.seed, *labels))

    def raw(self, n):
        return self._bits.random_raw(int(n)).astype(np.uint64)

    def uniform(self, shape):
        n = int(np.prod(shape))
        u = ((self.raw(n) >> np.uint64(11)) + np.uint64(1)).astype(np.float64)
        return (u * 2.0**-53).reshape(shape)

    def normal(self, shape):
        n = int(np.prod(shape))
        half = (n + 1) // 2
        u1 = self.uniform(half)
        u2 = self.uniform(half)
        r = np.sqrt(-2.0 * np.log(u1))
        t = 2.0 * np.pi * u2
        out = np.empty(2 * half)
        out[0::2] = r * np.cos(t)
        out[1::2] = r * np.sin(t)
        return out[:n].reshape(shape)

    def bytes(self, n):
        words = self.raw((n + 7) // 8)
        return words.astype("<u8").tobytes()[:n]

    def __repr__(self):
        return f"Stream(seed={self.seed:#018x})"
