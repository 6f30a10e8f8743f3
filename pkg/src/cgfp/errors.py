"""Exception hierarchy shared by all modules."""


class CGFPError(Exception):
    """Base class for errors raised by cgfp."""


class MalformedHeader(CGFPError, ValueError):
    pass


class NotSquare(CGFPError, ValueError):
    pass


class NotSymmetric(CGFPError, ValueError):
    pass


class NonPositiveDiagonal(CGFPError, ValueError):
    pass


class ZeroMatrix(CGFPError, ValueError):
    pass


class BadSpectrum(CGFPError, ValueError):
    pass


class OverlappingIntervals(CGFPError, ValueError):
    pass


class MatrixTooLarge(CGFPError, ValueError):
    pass


class NotPositiveDefinite(CGFPError, ValueError):
    pass


class Breakdown(CGFPError, ArithmeticError):
    """A recurrence denominator vanished or became non-finite at step ``k``."""

    def __init__(self, k, reason):
        super().__init__(f"breakdown at step {k}: {reason}")
        self.k = k
        self.reason = reason


class MissingVectors(CGFPError, ValueError):
    pass


class ZeroCoefficient(CGFPError, ZeroDivisionError):
    pass


class DimensionMismatch(CGFPError, ValueError):
    pass


class VariantMismatch(CGFPError, ValueError):
    pass


class BinsOverlap(CGFPError, ValueError):
    pass


class PrecisionTooLow(CGFPError, ValueError):
    pass


class IndefiniteTridiagonal(CGFPError, ValueError):
    """Raised when an extension is requested for a tridiagonal with a nonpositive eigenvalue."""


class LossOfBasis(CGFPError, ArithmeticError):
    """An extension vector vanished under orthogonalization before the basis was complete."""


class IntervalAssignmentAmbiguous(CGFPError, UserWarning):
    """A tridiagonal eigenvalue is equidistant from two spectrum points."""


class DegreeTooHigh(CGFPError, ValueError):
    pass


class NoConvergence(CGFPError, RuntimeError):
    """The exchange iteration hit its budget; ``value`` is the best levelled estimate."""

    def __init__(self, message, value=None, levelled=None):
        super().__init__(message)
        self.value = value
        self.levelled = levelled


class ConfigError(CGFPError, ValueError):
    pass
