"""Exception types shared across the package."""


class DsseError(Exception):
    """Base class for all package-specific errors."""


class CaseParseError(DsseError):
    """Raised when a case document cannot be parsed (syntax level).

    Carries ``line`` and ``field`` context where available.
    """

    def __init__(self, message, line=None, field=None):
        parts = [message]
        if line is not None:
            parts.append(f"line {line}")
        if field is not None:
            parts.append(f"field '{field}'")
        super().__init__("; ".join(parts))
        self.line = line
        self.field = field


class CaseValidationError(DsseError):
    """Raised when parsed case data violates network invariants."""


class InvalidBranchError(DsseError):
    """Raised for a branch whose series impedance is zero."""


class PowerFlowDivergenceError(DsseError):
    """Newton-Raphson failed to converge; carries the last mismatch."""

    def __init__(self, message, mismatch=None, iterations=None):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class LinearModelError(DsseError):
    """Raised when the load-block admittance matrix is singular."""


class InvalidFadError(DsseError):
    """Raised when a FAD value or explicit count is out of range."""


class MeasurementNotFoundError(DsseError):
    """Raised when a referenced measurement kind is absent from a set."""


class UnobservableError(DsseError):
    """Raised when a measurement set cannot determine all states.

    ``rank`` is the numerical Jacobian rank at the evaluation point.
    """

    def __init__(self, message, rank=None, states=None):
        super().__init__(message)
        self.rank = rank
        self.states = states


class NonConvergenceError(DsseError):
    """Gauss-Newton failed to converge; carries the last iterate."""

    def __init__(self, message, iterate=None, iterations=None):
        super().__init__(message)
        self.iterate = iterate
        self.iterations = iterations


class ProgramBuildError(DsseError):
    """Raised for malformed conic-program construction requests."""


class ExtractionError(DsseError):
    """Raised when a solution lacks the primal values to extract."""
