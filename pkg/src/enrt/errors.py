"""Exception types raised across the package."""


class EnrtError(Exception):
    """Base class for package errors."""


class DataValidationError(EnrtError, ValueError):
    """Malformed input data. Carries the offending row number when known."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class EstimabilityError(EnrtError, ValueError):
    """The design matrix is singular or there are too few residual degrees of freedom."""


class ConvergenceError(EnrtError, RuntimeError):
    def __init__(self, message, last_iterate=None):
        self.last_iterate = last_iterate
        super().__init__(message)


class NoRootError(EnrtError, RuntimeError):
    """Root bracketing failed."""


class NonFactorizableError(EnrtError, ValueError):
    """A comparison correlation matrix has no one-factor representation."""


class PowerUndefinedError(EnrtError, ValueError):
    """Power requested for a design with no heterogeneity to detect."""
