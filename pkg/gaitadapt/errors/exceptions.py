"""Custom exception classes for continual gait training."""

from __future__ import annotations


class GaitAdaptError(Exception):
    """Base exception for gaitadapt failures."""

    exit_code: int = 1


class ValidationError(GaitAdaptError):
    """Exception for rejected inputs (shapes, labels, ranges)."""

    exit_code = 3


class ConfigError(GaitAdaptError):
    """Exception for invalid experiment configuration."""

    exit_code = 2

    def __init__(self, message: str, key: str | None = None) -> None:
        super().__init__(message)
        self.key = key


class FairnessError(ConfigError):
    """Raised when runs being compared do not share stream and seed."""

    pass


class DataError(GaitAdaptError):
    """Exception for unusable datasets and split violations."""

    exit_code = 3


class CheckpointError(DataError):
    """Raised when a step checkpoint is missing or unreadable."""

    def __init__(self, message: str, step: int | None = None) -> None:
        super().__init__(message)
        self.step = step


class RunLockedError(GaitAdaptError):
    """Raised when a run directory is held by another writer."""

    exit_code = 3


class NumericalFailureError(GaitAdaptError):
    """Raised when an activation or loss component becomes non-finite."""

    exit_code = 4

    def __init__(self, message: str, component: str | None = None) -> None:
        super().__init__(message)
        self.component = component
