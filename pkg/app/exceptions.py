"""
Exception hierarchy for diffphy.

Every error raised by the library derives from DiffPhyError. The cli maps
each class to a process exit code through the ``exit_code`` attribute.
"""

from typing import Any, Optional


class DiffPhyError(Exception):
    """Base exception for all diffphy errors."""

    exit_code: int = 1


class DimensionError(DiffPhyError, ValueError):
    """Raised when array shapes do not chain or match."""
    pass


class NumericError(DiffPhyError, ValueError):
    """Raised when an input or intermediate value is NaN or infinite."""
    pass


class DomainError(DiffPhyError, ValueError):
    """Raised when an argument lies outside its documented domain."""
    pass


class StateError(DiffPhyError, RuntimeError):
    """Raised when an object is used in a state it does not support."""
    pass


class TrainingError(DiffPhyError):
    """
    Raised when training diverges.

    The partial trace recorded up to the failure is attached so the caller
    can report where the loss became non-finite.
    """

    exit_code = 3

    def __init__(self, message: str, trace: Optional[Any] = None):
        super().__init__(message)
        self.trace = trace


class ConfigError(DiffPhyError):
    """Raised for unknown keys, type mismatches and missing required fields."""

    exit_code = 2


class ArtifactError(DiffPhyError, OSError):
    """Raised when a checkpoint or result file cannot be read or written."""

    exit_code = 4


class CorruptionError(ArtifactError):
    """Raised when a checkpoint is truncated or fails its checksum."""
    pass


class IncompatibleCheckpointError(ArtifactError):
    """Raised when a checkpoint was written with another format version."""
    pass


class OutputPathError(ArtifactError):
    """Raised when a write would land outside the run's output directory."""
    pass
