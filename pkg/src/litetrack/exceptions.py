"""Exception hierarchy used across the package."""


class LiteTrackError(Exception):
    """Base class for all package errors."""


class DimensionError(LiteTrackError, ValueError):
    """Tensor extents are incompatible with the requested operation."""


class ConfigError(LiteTrackError, ValueError):
    """A model configuration, weight store or config file is invalid."""


class InputError(LiteTrackError, ValueError):
    """User-supplied data (images, boxes, sequences) is unusable."""


class NumericError(LiteTrackError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class InvariantError(LiteTrackError, AssertionError):
    """An internal consistency check failed."""


class NotInitializedError(LiteTrackError, RuntimeError):
    """The tracker was used before ``fit`` set up its template."""
