"""Key-driven latent mixing for cancelable face templates, with a desk-scale
toy backend and an evaluation harness for anonymity, identity preservation,
unlinkability and irreversibility."""

from latentmix.errors import (
    ConfigError,
    FormatError,
    LatentmixError,
    NumericError,
    RevokedKeyError,
    SaturationError,
    ShapeError,
    StaleTraceError,
    UnknownKeyError,
)
from latentmix.latent import BandSpec, LatentCode, flatten, mix_naive, unflatten

__version__ = "0.1.0"

__all__ = [
    "BandSpec",
    "ConfigError",
    "FormatError",
    "LatentCode",
    "LatentmixError",
    "NumericError",
    "RevokedKeyError",
    "SaturationError",
    "ShapeError",
    "StaleTraceError",
    "UnknownKeyError",
    "flatten",
    "mix_naive",
    "unflatten",
]
