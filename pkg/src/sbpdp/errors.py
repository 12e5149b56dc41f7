"""Exception types shared across the package."""


class SbpDpError(Exception):
    """Base class for all package-specific errors."""


class BlocksOverlapError(SbpDpError):
    """Boundary blocks of the requested width do not fit on the grid."""


class ConstructionInfeasibleError(SbpDpError):
    """No valid operator exists for the requested parameters."""


class OptimizationFailedError(SbpDpError):
    """The free-parameter optimizer did not converge."""


class ProjectionInfeasibleError(SbpDpError):
    """The projection conditions are inconsistent for the given norms."""


class ConfigurationError(SbpDpError):
    """Invalid experiment configuration or missing registry entry."""


class InstabilityError(SbpDpError):
    """Non-finite state detected during time integration."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class SpectrumTooLargeError(SbpDpError):
    """Operator dimension exceeds the dense eigensolver guard."""


class SearchFailedError(SbpDpError):
    """A bracketing search did not enclose a transition."""
