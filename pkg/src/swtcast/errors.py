"""Exception types shared across the package."""


class SwtcastError(Exception):
    """Base class for package errors."""


class ConfigurationError(SwtcastError, ValueError):
    """Invalid or unsupported configuration value."""


class ShapeError(SwtcastError, ValueError):
    """Arrays with incompatible shapes."""


class LengthError(SwtcastError, ValueError):
    """Sequence length incompatible with the requested transform."""


class DataError(SwtcastError, ValueError):
    """Malformed or non-finite input data."""


class UsageError(SwtcastError, ValueError):
    """An API called outside its contract (e.g. a non-scalar loss)."""


class CheckpointError(SwtcastError):
    """A checkpoint file that cannot be loaded."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint written by an incompatible format version."""


class CorruptCheckpointError(CheckpointError):
    """Checkpoint truncated or failing its checksum."""


class TrainingDiverged(SwtcastError, RuntimeError):
    """Loss became non-finite or exploded; carries the history so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []
