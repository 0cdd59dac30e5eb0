"""Exception types raised across the package."""


class GraphFedError(Exception):
    """Base class for all package errors."""


class CovarianceNotPD(GraphFedError, ValueError):
    """A covariance matrix failed Cholesky factorization."""


class EmptyComponent(GraphFedError):
    """One or more mixture components received (almost) no responsibility mass."""

    def __init__(self, components):
        self.components = list(components)
        super().__init__(f"empty mixture components: {self.components}")


class TooFewSamples(GraphFedError, ValueError):
    pass


class ModelShapeMismatch(GraphFedError, ValueError):
    pass


class InvalidCostMatrix(GraphFedError, ValueError):
    pass


class InvalidProbability(GraphFedError, ValueError):
    pass


class InvalidPrior(GraphFedError, ValueError):
    pass


class MissingClusterIds(GraphFedError, ValueError):
    pass


class StepTooLarge(GraphFedError, ValueError):
    """The proximal step size implies an aggregation strength outside [0, 1]."""


class LabelLengthMismatch(GraphFedError, ValueError):
    pass


class ParseError(GraphFedError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientData(GraphFedError, ValueError):
    pass
