"""Exception and warning types shared across the package."""


class EwtlsError(Exception):
    """Base class for all errors raised by this package."""


class ModelInputError(EwtlsError):
    """Invalid model inputs: bad shapes, non-finite entries, bad index sets."""


class DataFormatError(EwtlsError):
    """Malformed data or covariance files (CSV/JSON boundary errors)."""


class ConstraintViolationError(EwtlsError):
    """The rank constraint on Z_J failed, surfaced as a non-positive-definite
    weighting matrix. ``row`` is the 0-based offending row when known."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class InitializationError(EwtlsError):
    """Solver initialization failed (e.g. rank-deficient design matrix)."""


class TlsSolutionError(EwtlsError):
    """The classical TLS problem has no solution (singular trailing block of
    the right singular vectors)."""


class NonConvergenceError(EwtlsError):
    """Raised only where a converged result is mandatory; the solver itself
    reports non-convergence through the result object."""


class InferenceError(EwtlsError):
    """Covariance/ellipsoid construction failed (singular or indefinite
    estimates)."""


class ModelWarning(UserWarning):
    """Questionable but non-fatal model input (e.g. m <= n)."""


class InferenceWarning(UserWarning):
    """Non-fatal inference diagnostics (e.g. indefinite nuisance estimate)."""
