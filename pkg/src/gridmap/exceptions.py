"""Exception types raised across the package."""


class CaseFormatError(ValueError):
    """A case document could not be parsed."""


class NetworkValidationError(ValueError):
    """A network violates a structural invariant."""


class ConvergenceError(RuntimeError):
    """Newton-Raphson failed to reach the mismatch tolerance."""

    def __init__(self, message, iterations=None, mismatch=None, timestep=None):
        super().__init__(message)
        self.iterations = iterations
        self.mismatch = mismatch
        self.timestep = timestep


class SingularJacobianError(ConvergenceError):
    """The power-flow Jacobian became singular at some iteration."""
