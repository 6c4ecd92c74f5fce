"""Synthetic identities for the toy backend.

A subject is a base latent (one mapped normal draw per layer). Each of its
images adds band-limited Gaussian jitter, strong on the coarse and fine
bands and weak on the mid band, so identity stays mostly in the mid band as
the backend assumes. Subjects are split into an attacker-training part and
an evaluation part.

On disk: ``faces.npy`` (S, P, d_img), ``latents.npy`` (S, L*d) and a
``manifest.json`` holding sizes, the split, the config hash and a SHA-256
checksum per array file.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from latentmix.errors import FormatError
from latentmix.prng import Stream, derive_seed

MANIFEST_SCHEMA = 1


def subject_id(index):
    return f"s{index:04d}"


def sample_latents(backend, stream, count):
    """``count`` flat latents, each layer an independent mapped normal draw."""
    base = stream.normal((count, backend.n_layers, backend.dim))
    return backend.mapper(base).reshape(count, backend.latent_size)


def band_jitter(backend, stream, shape, sigmas):
    """Gaussian jitter of shape ``shape + (L*d,)`` with a separate sigma per band."""
    d = backend.dim
    out = np.zeros(tuple(shape) + (backend.latent_size,))
    for name, (lo, hi) in zip(("coarse", "mid", "fine"), (backend.bands.coarse, backend.bands.mid, backend.bands.fine)):
        sigma = sigmas[name]
        if sigma:
            out[..., lo * d : hi * d] = sigma * stream.child(name).normal(tuple(shape) + ((hi - lo) * d,))
    return out


@dataclass
class SyntheticDataset:
    faces: np.ndarray
    latents: np.ndarray
    train_subjects: np.ndarray
    eval_subjects: np.ndarray
    config_hash: bytes = bytes(32)

    @property
    def n_subjects(self):
        return self.faces.shape[0]

    @property
    def images_per_subject(self):
        return self.faces.shape[1]

    @property
    def subject_ids(self):
        return [subject_id(s) for s in range(self.n_subjects)]

    def flat_faces(self):
        return self.faces.reshape(-1, self.faces.shape[-1])

    def flat_labels(self):
        return np.repeat(np.arange(self.n_subjects), self.images_per_subject)

    # -- persistence ---------------------------------------------------------

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        checksums = {}
        for name, arr in (("faces.npy", self.faces), ("latents.npy", self.latents)):
            path = directory / name
            np.save(path, np.ascontiguousarray(arr, dtype="<f8"))
            checksums[name] = _sha256(path)
        manifest = {
            "schema": MANIFEST_SCHEMA,
            "config_hash": self.config_hash.hex(),
            "subjects": int(self.n_subjects),
            "images_per_subject": int(self.images_per_subject),
            "image_dim": int(self.faces.shape[-1]),
            "latent_size": int(self.latents.shape[-1]),
            "train_subjects": [int(s) for s in self.train_subjects],
            "eval_subjects": [int(s) for s in self.eval_subjects],
            "files": checksums,
        }
        text = json.dumps(manifest, indent=1, sort_keys=True) + "\n"
        (directory / "manifest.json").write_text(text, encoding="utf-8")
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        try:
            manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad dataset manifest: {exc}") from None
        if manifest.get("schema") != MANIFEST_SCHEMA:
            raise FormatError(f"unsupported dataset manifest schema {manifest.get('schema')!r}")
        for name, digest in manifest["files"].items():
            if _sha256(directory / name) != digest:
                raise FormatError(f"{name}: checksum does not match the manifest")
        faces = np.load(directory / "faces.npy")
        latents = np.load(directory / "latents.npy")
        if faces.shape != (manifest["subjects"], manifest["images_per_subject"], manifest["image_dim"]):
            raise FormatError("faces.npy shape does not match the manifest")
        return cls(
            faces,
            latents,
            np.array(manifest["train_subjects"], dtype=np.int64),
            np.array(manifest["eval_subjects"], dtype=np.int64),
            bytes.fromhex(manifest["config_hash"]),
        )


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_dataset(config, backend):
    """Deterministic dataset from ``config.seed``."""
    root = Stream(derive_seed("dataset", config.seed))
    s, p = config.subjects, config.images_per_subject
    latents = sample_latents(backend, root.child("subjects"), s)
    sigmas = {"coarse": config.intra_sigma_coarse, "mid": config.intra_sigma_mid, "fine": config.intra_sigma_fine}
    jitter = band_jitter(backend, root.child("intra"), (s, p), sigmas)
    faces = backend.generate_flat(latents[:, None, :] + jitter)
    n_train = min(s - 1, max(1, int(round(config.attack_train_fraction * s))))
    order = np.argsort(root.child("split").uniform(s), kind="stable")
    return SyntheticDataset(
        faces,
        latents,
        np.sort(order[:n_train]),
        np.sort(order[n_train:]),
        config.hash(),
    )
