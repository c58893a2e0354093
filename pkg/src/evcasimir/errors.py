"""Exception types raised by the toolkit."""


class EvCasimirError(Exception):
    """Base class for computation errors (CLI exit status 1)."""


class HorizonError(EvCasimirError):
    """2m/r reached 1 somewhere on the grid."""


class DomainError(EvCasimirError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class PreconditionError(EvCasimirError):
    """Input violates the hypotheses an operator relies on."""


class RangeError(EvCasimirError):
    """Target value outside the range of a monotone inversion."""


class NoSupportError(EvCasimirError):
    """Static solve requested with a cutoff that gives no matter."""


class ParameterError(EvCasimirError, ValueError):
    """Inconsistent model parameters."""


class GridMismatchError(EvCasimirError):
    """Two distributions live on different grids."""


class SupportError(EvCasimirError):
    """Support inclusion required by a residual evaluation fails."""


class InitError(EvCasimirError):
    """Minimizer started from an inadmissible profile."""


class UsageError(Exception):
    """Bad command line or configuration (CLI exit status 2)."""
