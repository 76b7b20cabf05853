"""Exception types shared across the package."""

from __future__ import annotations


class DimensionError(ValueError):
    """A vector, matrix, or shape does not match its declared dimensions."""


class BudgetExceededError(RuntimeError):
    """Raised when an operation would push the query ledger past its budget.

    ``remaining`` is the number of queries still available, ``requested``
    the number the failed operation needed.  When raised from inside a
    training step, ``state`` carries the last consistent optimizer state
    so the caller can checkpoint it.
    """

    def __init__(self, remaining: int, requested: int, state=None):
        super().__init__(
            f"query budget exhausted: {requested} evaluation(s) requested, "
            f"{remaining} remaining"
        )
        self.remaining = remaining
        self.requested = requested
        self.state = state


class EvaluationError(RuntimeError):
    """An objective evaluation returned a non-finite value."""


class UnsupportedObjectiveError(ValueError):
    """The objective does not support the requested operation."""


class ConfigError(ValueError):
    """A run configuration is invalid.  ``line`` locates the offending line."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
