"""Exception hierarchy shared across the package."""


class FillProbError(Exception):
    """Base class for all package errors."""


class InvalidEvent(FillProbError, ValueError):
    """An order event violates the side/level rules for the current book."""


class UnsupportedEvent(FillProbError, ValueError):
    """An (event kind, level) combination that can never occur."""


class GridTooSmall(FillProbError):
    """A book or a race would leave the finite price or queue grid."""


class DomainError(FillProbError, ValueError):
    """A transform was evaluated at a pole or with an undefined prefactor."""


class NoConvergence(FillProbError, ArithmeticError):
    """A continued fraction did not reach the requested tolerance."""


class TransformEvalError(FillProbError, ArithmeticError):
    """A transform could not be evaluated at the requested arguments."""


class NonFiniteResult(FillProbError, ArithmeticError):
    """A numerical inversion produced NaN or infinity."""


class IntervalError(FillProbError, ValueError):
    """The evaluation point lies outside the truncation interval."""


class CumulantError(FillProbError, ArithmeticError):
    """Cumulants could not be estimated or imply a degenerate interval."""


class InversionError(FillProbError, ArithmeticError):
    """An inverted probability fell outside [0, 1] beyond tolerance."""


class MassLeak(FillProbError, ArithmeticError):
    """Probability masses failed to sum to one."""


class DivergentSeries(FillProbError, ArithmeticError):
    """A stationary series keeps non-negligible mass at its truncation point."""


class Stalled(FillProbError):
    """All event rates vanished before a terminal condition was reached."""


class EmptyCell(FillProbError, ValueError):
    """A frequency was requested for a conditioning event with no samples."""


class EmptySpreadCell(FillProbError, ValueError):
    """Events were recorded at a spread that has zero occupation time."""


class ZeroDepth(FillProbError, ValueError):
    """Cancellations were recorded where the average depth is zero."""


class InsufficientData(FillProbError, ValueError):
    """A grid cell has fewer observations than the count floor."""


class KeyMismatch(FillProbError, ValueError):
    """Two probability tables do not share the same set of cells."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class InputError(FillProbError, ValueError):
    """Malformed input file or arguments."""
