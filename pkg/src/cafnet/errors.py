"""Exception hierarchy shared across the package."""


class CafnetError(Exception):
    """Base class for all errors raised by cafnet."""


class DimensionError(CafnetError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigurationError(CafnetError, ValueError):
    """A configuration value is invalid or inconsistent."""


class UsageError(CafnetError, RuntimeError):
    """An API was called in a way its contract does not allow."""


class InvalidInputError(CafnetError, ValueError):
    """Input data is degenerate for the requested computation."""


class NumericError(CafnetError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""


class CheckpointError(CafnetError, IOError):
    """A checkpoint file is malformed, truncated or corrupted."""
