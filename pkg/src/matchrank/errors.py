"""Exception types raised across the package."""


class MatchrankError(Exception):
    """Base class for package errors."""


class DomainError(MatchrankError, ValueError):
    """An argument lies outside the domain of a function."""


class NumericalOverflowError(MatchrankError, ArithmeticError):
    pass


class NotConvergedError(MatchrankError, RuntimeError):
    """Raised when a consumer requires a converged equilibrium and did not get one."""


class DegenerateEquilibriumError(MatchrankError, ArithmeticError):
    pass


class InfeasibleMatrixError(MatchrankError, ValueError):
    """The matrix handed to the Birkhoff decomposition is not doubly stochastic."""


class SizeGuardError(MatchrankError):
    """Problem too large for an exact / memory-bound computation."""
