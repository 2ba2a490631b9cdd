"""Exception hierarchy shared by all modules."""


class ResNetLandscapeError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(ResNetLandscapeError, ValueError):
    """Input array is non-finite or has an invalid encoding."""


class ShapeError(ResNetLandscapeError, ValueError):
    """Array shapes are mutually inconsistent."""


class InvalidStateError(ResNetLandscapeError):
    """Operation is not valid for the current state of a value."""


class NumericalError(ResNetLandscapeError, ArithmeticError):
    """A loss or gradient became non-finite."""


class ConfigurationError(ResNetLandscapeError, ValueError):
    """An experiment or model configuration is not admissible."""


class PreconditionError(ResNetLandscapeError, ValueError):
    """A documented precondition of an operation does not hold."""


class ConstructionInfeasibleError(ResNetLandscapeError):
    """The dead-ReLU construction cannot be carried out on this dataset."""


class DataFormatError(ResNetLandscapeError, ValueError):
    """A dataset file could not be parsed."""


class ConvergenceError(ResNetLandscapeError):
    """An iterative solver exhausted its budget.

    The best iterate found so far is attached as ``best`` so callers can
    still inspect or report it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
