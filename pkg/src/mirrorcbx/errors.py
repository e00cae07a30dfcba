"""Exception hierarchy shared by all modules."""


class MirrorCBXError(Exception):
    """Base class for all library errors."""


class ConfigurationError(MirrorCBXError, ValueError):
    """Invalid parameters or configuration values."""


class DimensionError(MirrorCBXError, ValueError):
    """Array shapes or dimensions are inconsistent."""


class DomainError(MirrorCBXError, ValueError):
    """An argument lies outside the domain of an operation."""


class DegenerateConstraintError(MirrorCBXError, ValueError):
    """A constraint set is ill-defined, e.g. a zero normal vector."""


class ProjectionError(MirrorCBXError, ArithmeticError):
    """A projection could not be computed to the requested accuracy.

    Attributes
    ----------
    residual : float
        Best constraint residual reached before giving up.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class StepError(MirrorCBXError, ArithmeticError):
    """An optimizer step produced invalid values or an unsolvable system."""

    def __init__(self, message, iteration=None, particle=None):
        super().__init__(message)
        self.iteration = iteration
        self.particle = particle
