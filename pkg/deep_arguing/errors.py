"""Exception hierarchy shared by the library, CLI and HTTP service."""

from typing import Optional, Sequence


class DeepArguingError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DeepArguingError, ValueError):
    """Tensor shapes or feature widths do not agree."""


class ParameterError(DeepArguingError, ValueError):
    """A scalar hyperparameter is outside its valid range."""


class DomainError(DeepArguingError, ValueError):
    """A fuzzy truth value lies outside [0, 1]."""


class ConfigurationError(DeepArguingError, ValueError):
    """Run configuration is invalid or inconsistent with the data."""


class DataError(DeepArguingError, ValueError):
    """Input data could not be parsed under the dataset schema."""

    def __init__(self, message: str, rows: Optional[Sequence[int]] = None):
        self.rows = list(rows) if rows else []
        if self.rows:
            shown = ", ".join(str(r) for r in self.rows[:10])
            more = "" if len(self.rows) <= 10 else f" (+{len(self.rows) - 10} more)"
            message = f"{message} [rows: {shown}{more}]"
        super().__init__(message)


class CheckpointError(DeepArguingError, ValueError):
    """A model checkpoint is missing, corrupt or from an unknown format version."""


class NonFiniteError(DeepArguingError, ArithmeticError):
    """An operation produced NaN or Inf."""


class TrainingError(DeepArguingError, RuntimeError):
    """Training aborted, typically on a non-finite loss."""


def error_record(exc: BaseException) -> dict:
    """Machine-readable error payload used by the CLI and the HTTP service."""
    return {
        "status": "error",
        "error": str(exc),
        "type": type(exc).__name__,
    }
