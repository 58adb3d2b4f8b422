"""Exception types shared across the package."""


class DDetError(Exception):
    """Base class for all errors raised by ddet."""


class DimensionError(DDetError, ValueError):
    """A tensor shape does not satisfy an operation's contract."""


class PreconditionError(DDetError, ValueError):
    """An input violates a documented precondition (e.g. size not divisible by 4)."""


class NonFiniteGradientError(DDetError, FloatingPointError):
    def __init__(self, name, count):
        super().__init__(f"parameter {name!r} has {count} non-finite gradient value(s)")
        self.name = name
        self.count = count


class CheckpointError(DDetError):
    """Checkpoint file could not be read or does not match the model."""


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    pass


class DataError(DDetError):
    """Problem with image data on disk."""


class MissingCounterpartError(DataError):
    pass


class ImageDecodeError(DataError):
    pass


class SizeMismatchError(DataError):
    pass


class ConfigError(DDetError):
    """Malformed or unknown configuration entry."""
