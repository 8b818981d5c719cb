"""Exception hierarchy shared by every package.

Library code raises these; only ``src.cli`` catches them and maps them to exit codes:
``ValidationError`` -> 1, ``RuntimeFailure`` -> 2.
"""
from typing import Optional


class ProgressionError(Exception):
    """Base class for all errors raised by this project."""


class ValidationError(ProgressionError, ValueError):
    """Invalid input or configuration."""


class ConfigError(ValidationError):
    """Unknown keys, wrong types, or out-of-range configuration values."""


class ShapeError(ValidationError):
    """A tensor or layer shape contract was violated."""


class ArchitectureMismatchError(ValidationError):
    """Weights cannot be transferred between two architectures."""

    def __init__(self, parameter: str, detail: str):
        super().__init__(f"architecture mismatch at parameter '{parameter}': {detail}")
        self.parameter = parameter


class UndefinedMetricError(ValidationError):
    """A metric is undefined for the given input."""


class InsufficientDataError(ValidationError):
    """Too few scans, eyes or patients for the requested operation."""


class PreprocessingError(ValidationError):
    """B-scan preprocessing cannot be applied."""


class LeakageError(ValidationError):
    """A patient appears in more than one of train/validation/test."""


class RuntimeFailure(ProgressionError, RuntimeError):
    """Failure while running a computation."""


class NonFiniteError(RuntimeFailure):
    """NaN or Inf in a forward value, gradient or loss."""

    def __init__(self, message: str, step: Optional[int] = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class BatchNormStateError(RuntimeFailure):
    """Eval-mode batch normalisation requested before any statistics exist."""


class CorruptLogError(RuntimeFailure):
    """A metric log row cannot be parsed."""

    def __init__(self, path, row: int, detail: str):
        super().__init__(f"corrupt log {path}, row {row}: {detail}")
        self.path = path
        self.row = row


class CheckpointError(RuntimeFailure):
    """A weight file is unreadable or inconsistent with its manifest."""


__all__ = [
    "ProgressionError",
    "ValidationError",
    "ConfigError",
    "ShapeError",
    "ArchitectureMismatchError",
    "UndefinedMetricError",
    "InsufficientDataError",
    "PreprocessingError",
    "LeakageError",
    "RuntimeFailure",
    "NonFiniteError",
    "BatchNormStateError",
    "CorruptLogError",
    "CheckpointError",
]
