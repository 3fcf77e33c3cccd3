"""Custom exceptions."""

from gaitadapt.errors.exceptions import (
    CheckpointError,
    ConfigError,
    DataError,
    FairnessError,
    GaitAdaptError,
    NumericalFailureError,
    RunLockedError,
    ValidationError,
)

__all__ = [
    "GaitAdaptError",
    "ValidationError",
    "ConfigError",
    "FairnessError",
    "DataError",
    "CheckpointError",
    "RunLockedError",
    "NumericalFailureError",
]
