"""Exception hierarchy shared across the package."""


class KrcpsError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(KrcpsError, ValueError):
    """Array shapes do not line up."""


class InsufficientSamplesError(KrcpsError, ValueError):
    """Too few sampler draws for the requested miscoverage level."""


class RiskControlError(KrcpsError, RuntimeError):
    """The upper confidence bound cannot be pushed below the risk level."""


class InfeasibleError(KrcpsError, RuntimeError):
    """The convex surrogate program has no feasible point in its search box."""


class NumericalError(KrcpsError, ArithmeticError):
    """Non-finite values or a diverging iteration."""
