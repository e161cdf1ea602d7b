"""Exception hierarchy shared by the package."""

from __future__ import annotations


class CopulaFolioError(Exception):
    """Base class for all package errors."""


class DomainError(CopulaFolioError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class SizeError(CopulaFolioError, ValueError):
    """Too few observations or an empty dimension."""


class ShapeError(CopulaFolioError, ValueError):
    """Array shapes do not agree."""


class ParseError(CopulaFolioError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AlignmentError(CopulaFolioError, ValueError):
    """No common trading dates remain after alignment.

    ``report`` carries the partial data-quality report, if one was built.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class UndefinedCorrelationError(CopulaFolioError, ValueError):
    """Correlation requested for a zero-variance input."""


class MomentExistenceError(DomainError):
    """The requested moment does not exist for the given shape parameters."""


class FitError(CopulaFolioError, RuntimeError):
    """Maximum-likelihood fit failed; ``best`` carries the incumbent, if any."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class MatrixError(CopulaFolioError, ValueError):
    """Matrix is asymmetric or indefinite beyond repair tolerance."""


class DegenerateError(CopulaFolioError, ValueError):
    """Quantity undefined because a variance is zero."""


class InsufficientDataError(SizeError):
    """Panel too short for the requested rolling window."""


class BacktestError(CopulaFolioError, RuntimeError):
    """Too many rolling windows failed to evaluate."""
