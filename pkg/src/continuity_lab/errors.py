"""Exception types shared across the package."""


class LabError(Exception):
    """Base class for all errors raised by continuity_lab."""


class InvalidArgument(LabError, ValueError):
    pass


class EvaluationError(LabError):
    """A user-supplied function produced non-finite values."""


class IntegrationError(LabError):
    """A trajectory left the domain (non-tangential field or too large a step)."""


class StabilityError(LabError):
    """The CFL condition is violated for some cell."""


class BoundaryError(LabError, ValueError):
    """Velocity field is not tangential on a walled boundary."""


class DegenerateDistance(LabError):
    pass


class UnbalancedMarginals(LabError, ValueError):
    pass


class SizeError(LabError):
    """Transport instance too large for the dense exact solver."""


class ConvergenceError(LabError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual
