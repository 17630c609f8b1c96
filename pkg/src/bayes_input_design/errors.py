"""Exception hierarchy shared by all modules."""


class DesignError(Exception):
    """Base class for every error raised by the package."""


class InvalidSystem(DesignError, ValueError):
    """System data violate a structural assumption (dimensions, rank)."""


class DimensionMismatch(DesignError, ValueError):
    pass


class NonFiniteMatrix(DesignError, FloatingPointError):
    pass


class UnsupportedDimension(DesignError, ValueError):
    pass


class SingularCovariance(DesignError, ValueError):
    pass


class DegenerateEigenvalue(DesignError, ValueError):
    pass


class SingularGram(DesignError, ValueError):
    pass


class NonFiniteCost(DesignError, FloatingPointError):
    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite cost at iterate {iteration}")


class ConfigError(DesignError, ValueError):
    """Configuration document failed validation.

    ``path`` is the dotted location of the offending field.
    """

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")
