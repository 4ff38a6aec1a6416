"""Exception types shared across the package."""


class WwrtError(Exception):
    """Base class for package errors."""


class InvalidParameterError(WwrtError, ValueError):
    """A model or distribution parameter is outside its valid range."""


class ValidationError(WwrtError, ValueError):
    """Input data or configuration failed validation."""


class NumericalFailure(WwrtError, RuntimeError):
    """A numerical routine produced an unusable result."""


class ConvergenceError(NumericalFailure):
    """An iterative optimizer stopped without meeting its tolerance.

    The best point found so far is kept on ``params`` so callers can still
    inspect or reuse it.
    """

    def __init__(self, message, params=None, trace=None):
        super().__init__(message)
        self.params = params
        self.trace = trace
