"""Exception types shared across the package."""


class SnutsError(Exception):
    """Base class for package errors."""


class NotPositiveDefinite(SnutsError):
    """A factorization hit a nonpositive pivot."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"nonpositive pivot at column {column}")


class DimensionTooLarge(SnutsError):
    """A dense operation was requested above the configured cap."""


class NoInteriorMode(SnutsError):
    """Inner optimization could not locate a usable mode."""


class MaxIterations(SnutsError):
    """An iterative method ran out of iterations."""


class NonFiniteObjective(SnutsError):
    """The objective became non-finite during optimization."""
