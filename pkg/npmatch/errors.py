# npmatch/errors.py
"""Structured exceptions shared by every npmatch module.

Each error carries a machine-readable ``error_type`` and optional ``details`` so command
handlers can turn it into the ``{"type", "message", "details"}`` object they report.
"""

from typing import Any, Dict, Optional


class NpMatchError(Exception):
    """Base class for all npmatch errors."""

    error_type = "npmatch_error"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type": self.error_type,
            "message": self.message,
            "details": self.details,
        }


class DimensionMismatchError(NpMatchError, ValueError):
    error_type = "dimension_mismatch"


class NotPositiveDefiniteError(NpMatchError, ArithmeticError):
    error_type = "not_positive_definite"


class NegativeDivergenceError(NpMatchError, ArithmeticError):
    error_type = "negative_divergence"


class InvalidParameterError(NpMatchError, ValueError):
    error_type = "invalid_parameter"


class EmptyContextError(NpMatchError, ValueError):
    error_type = "empty_context"


class MissingCacheError(NpMatchError, RuntimeError):
    error_type = "missing_cache"


class NonFiniteError(NpMatchError, RuntimeError):
    error_type = "non_finite"


class ScheduleError(NpMatchError, ValueError):
    error_type = "schedule_out_of_range"


class ConfigError(NpMatchError, ValueError):
    error_type = "invalid_config"


class CheckpointError(NpMatchError, RuntimeError):
    error_type = "corrupt_checkpoint"


class TrainingDivergedError(NonFiniteError):
    """Raised when the training loss stops being finite; details hold the diagnostic dump."""

    error_type = "training_diverged"
