"""End-to-end protection: invert, map the key, mix, augment, refine, generate.

Template binary format (all integers and floats little-endian)::

    magic        4 bytes   b"FAMX"
    version      uint16
    L, d, d_img  uint32 x 3
    z_p*         L*d float64, layer-major
    x_p          d_img float64
    key_id       8 bytes
    config_hash  32 bytes
    subject_id   uint32 byte length, then UTF-8 bytes
"""

import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from latentmix.errors import FormatError, NumericError, ShapeError
from latentmix.keying import key_to_latent
from latentmix.latent import LatentCode, mix_naive_flat
from latentmix.losses import LatentObjective, LossWeights
from latentmix.numcore import cosine
from latentmix.optimize import OptimizerSettings, refine_batch
from latentmix.prng import Stream

TEMPLATE_MAGIC = b"FAMX"
TEMPLATE_VERSION = 1
CHUNK_SIZE = 50


@dataclass(frozen=True)
class AugmentationPolicy:
    """``n`` latent-jitter augmentations on the coarse and fine bands; mid is never touched."""

    n: int = 5
    sigma_coarse: float = 0.1
    sigma_fine: float = 0.1

    def __post_init__(self):
        if self.n < 1 or self.sigma_coarse < 0 or self.sigma_fine < 0:
            raise ValueError("augmentation needs n >= 1 and nonnegative sigmas")


@dataclass(frozen=True)
class ProtectionSettings:
    weights: LossWeights = LossWeights()
    optimizer: OptimizerSettings = OptimizerSettings()
    augmentation: AugmentationPolicy = AugmentationPolicy()


@dataclass(eq=False)
class ProtectedTemplate:
    latent: LatentCode
    face: np.ndarray
    key_id: str
    subject_id: str = ""
    config_hash: bytes = bytes(32)
    created: float = field(default=None, compare=False)

    def __eq__(self, other):
        if not isinstance(other, ProtectedTemplate):
            return NotImplemented
        return (
            self.latent == other.latent
            and np.array_equal(self.face, other.face)
            and self.key_id == other.key_id
            and self.subject_id == other.subject_id
            and self.config_hash == other.config_hash
        )

    def to_bytes(self):
        n_layers, dim = self.latent.shape
        face = np.ascontiguousarray(self.face, dtype="<f8")
        key_id = bytes.fromhex(self.key_id)
        if len(key_id) != 8 or len(self.config_hash) != 32:
            raise FormatError("template key_id must be 8 bytes and config hash 32 bytes")
        subject = self.subject_id.encode("utf-8")
        return b"".join(
            [
                struct.pack("<4sH3I", TEMPLATE_MAGIC, TEMPLATE_VERSION, n_layers, dim, face.size),
                np.ascontiguousarray(self.latent.layers, dtype="<f8").tobytes(),
                face.tobytes(),
                key_id,
                self.config_hash,
                struct.pack("<I", len(subject)),
                subject,
            ]
        )

    @classmethod
    def from_bytes(cls, blob):
        head = struct.calcsize("<4sH3I")
        if len(blob) < head:
            raise FormatError("template truncated")
        magic, version, n_layers, dim, image_dim = struct.unpack("<4sH3I", blob[:head])
        if magic != TEMPLATE_MAGIC:
            raise FormatError("not a template (bad magic)")
        if version != TEMPLATE_VERSION:
            raise FormatError(f"unsupported template version {version}")
        off = head
        nz, nx = 8 * n_layers * dim, 8 * image_dim
        if len(blob) < off + nz + nx + 8 + 32 + 4:
            raise FormatError("template truncated")
        z = np.frombuffer(blob, dtype="<f8", count=n_layers * dim, offset=off).reshape(n_layers, dim)
        off += nz
        x = np.frombuffer(blob, dtype="<f8", count=image_dim, offset=off).astype(np.float64)
        off += nx
        key_id = blob[off : off + 8].hex()
        off += 8
        config_hash = bytes(blob[off : off + 32])
        off += 32
        (length,) = struct.unpack("<I", blob[off : off + 4])
        off += 4
        if len(blob) != off + length:
            raise FormatError("template length does not match its subject-id prefix")
        try:
            subject = blob[off:].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"subject id is not UTF-8: {exc}") from None
        return cls(LatentCode(z), x, key_id, subject, config_hash)


def augment(x_r, policy, stream, backend):
    """``policy.n`` faces re-generated from band-limited jitter of ``invert(x_r)``."""
    z = backend.invert_flat(np.asarray(x_r, dtype=np.float64))
    return list(_augment_latents(z[None], policy, [stream], backend)[1][0])


def _augment_latents(z_r, policy, streams, backend):
    """Jitter each row of ``z_r`` ``policy.n`` times. Returns (inverted latents, faces)."""
    bands, d = backend.bands, backend.dim
    coarse = np.arange(bands.coarse[0] * d, bands.coarse[1] * d)
    fine = np.arange(bands.fine[0] * d, bands.fine[1] * d)
    jitter = np.zeros((z_r.shape[0], policy.n, z_r.shape[1]))
    for k, stream in enumerate(streams):
        jitter[k][:, coarse] = policy.sigma_coarse * stream.child("coarse").normal((policy.n, coarse.size))
        jitter[k][:, fine] = policy.sigma_fine * stream.child("fine").normal((policy.n, fine.size))
    faces = backend.generate_flat(z_r[:, None, :] + jitter)
    return backend.invert_flat(faces), faces


def _protect_chunk(faces, key_latents, seeds, backend, settings):
    z_r = backend.invert_flat(faces)
    streams = [Stream(s) for s in seeds]
    z_aug, _ = _augment_latents(z_r, settings.augmentation, streams, backend)
    d = backend.dim
    codes = np.concatenate(
        [
            mix_naive_flat(z_r, key_latents, backend.bands, d)[:, None],
            mix_naive_flat(z_aug, key_latents[:, None, :], backend.bands, d),
        ],
        axis=1,
    )
    objective = LatentObjective(backend, faces, settings.weights)
    refined, trace = refine_batch(codes, objective, settings.optimizer)
    return refined[:, 0], trace


def protect_batch(
    faces,
    keys,
    backend,
    settings,
    seeds,
    subject_ids=None,
    registry=None,
    config_hash=bytes(32),
    threads=1,
    traces=None,
):
    """Protect many faces. Item ``k`` uses ``keys[k]`` and augmentation seed ``seeds[k]``.

    Work is cut into fixed chunks of ``CHUNK_SIZE`` items, so results do not
    depend on ``threads``. Pass a list as ``traces`` to collect each chunk's
    :class:`~latentmix.optimize.OptTrace`.
    """
    faces = np.atleast_2d(np.asarray(faces, dtype=np.float64))
    n_items = faces.shape[0]
    if len(keys) != n_items or len(seeds) != n_items:
        raise ShapeError("protect_batch: faces, keys and seeds must have equal length")
    subject_ids = list(subject_ids) if subject_ids is not None else [""] * n_items
    if registry is not None:
        for key in {k.key_id: k for k in keys}.values():
            registry.require_active(key.key_id)

    cache = {}
    for key in keys:
        if key.key_id not in cache:
            cache[key.key_id] = key_to_latent(key, backend.mapper, backend.n_layers, backend.dim).flatten()
    key_latents = np.stack([cache[k.key_id] for k in keys])

    bounds = [(a, min(a + CHUNK_SIZE, n_items)) for a in range(0, n_items, CHUNK_SIZE)]

    def run(bound):
        a, b = bound
        try:
            return _protect_chunk(faces[a:b], key_latents[a:b], seeds[a:b], backend, settings)
        except NumericError as exc:
            raise NumericError(f"protection of items {a}..{b - 1} failed: {exc}", step=exc.step) from exc

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, bounds))
    else:
        results = [run(bound) for bound in bounds]

    now = time.time()
    templates = []
    for (a, _), (latents, trace) in zip(bounds, results):
        if traces is not None:
            traces.append(trace)
        for k in range(latents.shape[0]):
            # one row at a time: regenerating a single template must reproduce it bit-exactly
            face = backend.generate_flat(latents[k])
            templates.append(
                ProtectedTemplate(
                    LatentCode(latents[k].reshape(backend.n_layers, backend.dim)),
                    face,
                    keys[a + k].key_id,
                    subject_ids[a + k],
                    config_hash,
                    now,
                )
            )
    return templates


def protect(x_r, key, backend, settings=ProtectionSettings(), seed=0, subject_id="", registry=None, config_hash=bytes(32)):
    """Protect one face with one key. Output depends only on the arguments."""
    return protect_batch([x_r], [key], backend, settings, [seed], [subject_id], registry, config_hash)[0]


def naive_protect(x_r, key, backend):
    """Mixing alone, without refinement: the optimizer's starting point."""
    z_r = backend.invert(np.asarray(x_r, dtype=np.float64))
    z_f = key_to_latent(key, backend.mapper, backend.n_layers, backend.dim)
    z_p = mix_naive_flat(z_r.flatten(), z_f.flatten(), backend.bands, backend.dim)
    return ProtectedTemplate(LatentCode(z_p.reshape(z_r.shape)), backend.generate_flat(z_p), key.key_id)


def verify(t1, t2, backend, threshold):
    """Match iff the identity cosine of the two protected faces is >= ``threshold``."""
    for t in (t1, t2):
        if not isinstance(t, ProtectedTemplate) or np.shape(t.face) != (backend.image_dim,):
            raise FormatError("malformed template")
    score = cosine(backend.identity_embed(t1.face), backend.identity_embed(t2.face))
    return score >= threshold, score
