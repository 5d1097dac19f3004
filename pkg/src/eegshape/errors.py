"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation requires."""


class NonFiniteError(FloatingPointError):
    """A gradient or loss turned NaN/Inf."""


class DataError(ValueError):
    """Malformed input data (CSV rows, labels, channel counts)."""


class CheckpointError(IOError):
    """Missing or corrupt checkpoint directory or tensor file."""


class ConfigError(ValueError):
    """Invalid configuration file or conflicting options."""


class TrainingError(RuntimeError):
    """A training routine could not reach its target."""
