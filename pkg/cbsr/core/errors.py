"""Error hierarchy for cbsr."""

from typing import Any


class CBSRError(Exception):
    """Base class for every error raised by cbsr."""

    def __init__(self, message: str, **context: Any) -> None:
        """Initialize the error.

        Args:
            message: Human readable description
            **context: Extra machine readable fields (row, column, step, ...)
        """
        super().__init__(message)
        self.message = message
        self.context = {k: v for k, v in context.items() if v is not None}

    def to_dict(self) -> dict[str, Any]:
        """Serialize the error for machine readable reports.

        Returns:
            Dictionary with the error class name, message and context
        """
        return {"error": type(self).__name__, "message": self.message, **self.context}


class DataError(CBSRError, ValueError):
    """Invalid input data, optionally located by row and column."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None) -> None:
        """Initialize the error.

        Args:
            message: Description of the problem
            row: 1-based data row (header excluded) where the problem was found
            column: Column name where the problem was found
        """
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message, row=row, column=column)


class DomainError(CBSRError, ValueError):
    """Argument outside the domain of a function."""


class ConfigError(CBSRError):
    """Invalid run configuration."""


class NumericalError(CBSRError):
    """A solver could not produce a valid solution."""


class Separated(NumericalError):
    """Score maximization diverges (quasi-separation or infeasible exact balance)."""


class SingularHessian(NumericalError):
    """Hessian is rank deficient beyond the jitter tolerance."""


class Infeasible(NumericalError):
    """Exact balance constraints of a dual problem cannot be met."""


class IllConditionedGram(NumericalError):
    """Kernel system is too ill-conditioned to solve; a larger penalty is needed."""


class NonConcaveRule(NumericalError):
    """Scoring rule outside the range where the score is concave in the linear predictor."""
