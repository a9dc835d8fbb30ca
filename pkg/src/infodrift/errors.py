"""Exception types shared across the package."""


class InfoDriftError(Exception):
    """Base class for all package errors."""


class ParameterError(InfoDriftError, ValueError):
    """An argument violates an operation's preconditions."""


class SingularityError(InfoDriftError, ArithmeticError):
    """A drift was evaluated at a point where it is not finite."""


class InconsistentStateError(InfoDriftError, ValueError):
    """Path state and insider signal cannot occur together."""


class AdmissibilityError(InfoDriftError):
    """Wealth became non-positive during a simulated trading path."""


class QuadratureError(InfoDriftError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance.

    The best available estimate and its error bound are kept on the
    exception so callers can decide whether to accept them.
    """

    def __init__(self, message: str, estimate: float, error: float):
        super().__init__(f"{message} (estimate={estimate!r}, error={error!r})")
        self.estimate = estimate
        self.error = error
