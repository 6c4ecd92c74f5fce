"""Exception hierarchy. Each CLI exit code maps onto one branch of it."""


class LatentmixError(Exception):
    pass


class ShapeError(LatentmixError, ValueError):
    """Operand dimensions disagree."""


class StaleTraceError(LatentmixError):
    """A forward trace was replayed after its inputs changed."""


class SaturationError(LatentmixError, ValueError):
    """A face vector sits too close to +-1 for the encoder's atanh."""


class NumericError(LatentmixError, ArithmeticError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class UnknownKeyError(LatentmixError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown key"


class RevokedKeyError(LatentmixError):
    pass


class ConfigError(LatentmixError, ValueError):
    pass


class FormatError(LatentmixError, ValueError):
    """Malformed persisted artifact (template, key, registry, dataset)."""
