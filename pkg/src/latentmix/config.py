"""Experiment configuration: a flat ``key = value`` text file.

Blank lines and ``#`` comments are ignored, unknown keys are errors. Lists
are comma-separated. Every field and its default is listed in
``ExperimentConfig``; ``latentmix --help`` and the README describe them.

The config hash is SHA-256 over the canonical dump of every field that can
change a result (output location, thread count and verbosity are excluded).
"""

import dataclasses
import hashlib
from dataclasses import dataclass, fields

from latentmix.backends import ToyBackend
from latentmix.errors import ConfigError
from latentmix.latent import BandSpec
from latentmix.losses import LossWeights
from latentmix.optimize import OptimizerSettings
from latentmix.pipeline import AugmentationPolicy, ProtectionSettings

NOT_HASHED = {"out_dir", "threads"}


@dataclass(frozen=True)
class ExperimentConfig:
    # randomness
    seed: int = 42
    backend_seed: int = 42
    # toy backend
    layers: int = 18
    latent_dim: int = 64
    image_dim: int = 0  # 0 means 2 * layers * latent_dim
    identity_dim: int = 32
    attribute_dim: int = 32
    leak: float = 0.2
    bands: str = "0-2,3-7,8-17"
    # losses
    lambda_anon: float = 10.0
    lambda_idp: float = 10.0
    lambda_attr: float = 0.15
    margin: float = 0.0
    # optimizer
    optimizer: str = "adam"
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 50
    # augmentation
    augmentations: int = 5
    aug_sigma_coarse: float = 0.1
    aug_sigma_fine: float = 0.1
    # synthetic dataset
    subjects: int = 100
    images_per_subject: int = 5
    intra_sigma_coarse: float = 0.5
    intra_sigma_mid: float = 0.8
    intra_sigma_fine: float = 0.5
    attack_train_fraction: float = 0.5
    # keys
    key_policy: str = "per_subject"
    robustness_keys: int = 5
    # evaluation
    fmr: tuple = (0.001, 0.0001, 0.00001)
    bins: int = 0  # 0 means Doane's rule
    mapper_alpha: float = 1.0
    mapper_pairs: int = 0  # 0 means image_dim + 1
    # output
    out_dir: str = "run"
    threads: int = 1

    def __post_init__(self):
        try:
            self.validate()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    def validate(self):
        checks = [
            (self.layers >= 3, "layers must be >= 3"),
            (self.latent_dim >= 1, "latent_dim must be >= 1"),
            (self.image_dim == 0 or self.image_dim >= self.layers * self.latent_dim, "image_dim must be 0 or >= layers*latent_dim"),
            (0.0 <= self.leak < 1.0, "leak must lie in [0, 1)"),
            (min(self.lambda_anon, self.lambda_idp, self.lambda_attr) >= 0, "loss weights must be >= 0"),
            (-1.0 <= self.margin <= 1.0, "margin must lie in [-1, 1]"),
            (self.optimizer in ("adam", "sgd"), "optimizer must be adam or sgd"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1, "adam betas must lie in [0, 1)"),
            (self.steps >= 0, "steps must be >= 0"),
            (self.augmentations >= 1, "augmentations must be >= 1"),
            (min(self.aug_sigma_coarse, self.aug_sigma_fine) >= 0, "augmentation sigmas must be >= 0"),
            (self.subjects >= 2 and self.images_per_subject >= 1, "need subjects >= 2 and images_per_subject >= 1"),
            (min(self.intra_sigma_coarse, self.intra_sigma_mid, self.intra_sigma_fine) >= 0, "intra-class sigmas must be >= 0"),
            (0.0 < self.attack_train_fraction < 1.0, "attack_train_fraction must lie in (0, 1)"),
            (self.key_policy in ("per_subject", "deployment"), "key_policy must be per_subject or deployment"),
            (self.robustness_keys >= 2, "robustness_keys must be >= 2"),
            (len(self.fmr) >= 1 and all(0 < f < 1 for f in self.fmr), "fmr values must lie in (0, 1)"),
            (self.bins == 0 or self.bins >= 2, "bins must be 0 or >= 2"),
            (self.mapper_alpha >= 0, "mapper_alpha must be >= 0"),
            (self.mapper_pairs >= 0, "mapper_pairs must be >= 0"),
            (self.threads >= 1, "threads must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        bands = self.band_spec()
        try:
            bands.validate(self.layers)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        mid = (bands.mid[1] - bands.mid[0]) * self.latent_dim
        other = self.layers * self.latent_dim - mid
        if self.identity_dim > mid or self.identity_dim > other or self.attribute_dim > other:
            raise ConfigError("identity_dim/attribute_dim exceed the band widths they project from")

    # -- derived objects ------------------------------------------------------

    def band_spec(self):
        try:
            return BandSpec.parse(self.bands)
        except ValueError as exc:
            raise ConfigError(f"bad bands {self.bands!r}: {exc}") from None

    @property
    def resolved_image_dim(self):
        return self.image_dim or 2 * self.layers * self.latent_dim

    def backend(self):
        return ToyBackend(
            self.layers,
            self.latent_dim,
            self.resolved_image_dim,
            self.identity_dim,
            self.attribute_dim,
            self.leak,
            self.band_spec(),
            self.backend_seed,
        )

    def protection(self):
        return ProtectionSettings(
            LossWeights(self.lambda_anon, self.lambda_idp, self.lambda_attr, self.margin),
            OptimizerSettings(self.optimizer, self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_eps, self.steps),
            AugmentationPolicy(self.augmentations, self.aug_sigma_coarse, self.aug_sigma_fine),
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # -- text form ------------------------------------------------------------

    def dump(self, include_unhashed=True):
        lines = []
        for f in fields(self):
            if not include_unhashed and f.name in NOT_HASHED:
                continue
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def hash(self):
        return hashlib.sha256(self.dump(include_unhashed=False).encode("utf-8")).digest()

    def hash_hex(self):
        return self.hash().hex()


def _format(value):
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(name, raw):
    kind = _FIELD_TYPES[name]
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (tuple, "tuple"):
            return tuple(float(p) for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def parse_config(text, base=None):
    """Parse ``key = value`` lines on top of ``base`` (defaults if omitted)."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw.strip())
    base = base or ExperimentConfig()
    return dataclasses.replace(base, **values)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 ({exc})") from None
