"""Exception types shared across the package."""


class HeatVarError(Exception):
    """Base class for errors raised by heatvar."""


class DomainError(HeatVarError, ValueError):
    """An argument lies outside the domain of a closed-form expression."""


class UsageError(HeatVarError, ValueError):
    """Invalid combination of inputs (bad grid, too few replications, ...)."""


class ResourceError(HeatVarError, RuntimeError):
    """A request would exceed a configured memory or iteration budget.

    ``achievable`` carries the best value that fits the budget, when one
    is meaningful (e.g. the smallest certifiable truncation error).
    """

    def __init__(self, message, achievable=None):
        super().__init__(message)
        self.achievable = achievable


class FactorizationError(HeatVarError, ArithmeticError):
    """Cholesky factorization met a non-positive pivot."""

    def __init__(self, message, index, value):
        super().__init__(message)
        self.index = index
        self.value = value


class AssumptionCheckError(HeatVarError):
    """A test-function family failed a structural check at ``location``."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location
