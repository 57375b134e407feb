"""Household load forecasting on stationary wavelet subbands with a numpy autodiff core."""

__version__ = "0.1.0"

from . import autodiff, data, evaluation, layers, models, pipeline, swt  # noqa: E402
from .errors import (  # noqa: E402
    CheckpointError,
    ConfigurationError,
    CorruptCheckpointError,
    DataError,
    LengthError,
    ShapeError,
    SwtcastError,
    TrainingDiverged,
    UnsupportedVersionError,
    UsageError,
)

__all__ = [
    "autodiff",
    "data",
    "evaluation",
    "layers",
    "models",
    "pipeline",
    "swt",
    "SwtcastError",
    "ConfigurationError",
    "ShapeError",
    "LengthError",
    "DataError",
    "UsageError",
    "CheckpointError",
    "UnsupportedVersionError",
    "CorruptCheckpointError",
    "TrainingDiverged",
]
