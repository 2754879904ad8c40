"""Exception types shared across the package."""


class NitsError(Exception):
    """Base class for errors raised by this package."""


class DomainError(NitsError, ValueError):
    """An input lies outside the domain an operation is defined on."""


class NumericalError(NitsError, ArithmeticError):
    """A non-finite intermediate value was produced.

    ``layer`` identifies the network layer (1-based) where the value
    first appeared, when known.
    """

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class ConvergenceError(NitsError, RuntimeError):
    """An iterative routine ran out of its iteration budget.

    Carries the last bracket so callers can inspect how close the
    routine got.
    """

    def __init__(self, message, bracket=None, iterations=None):
        super().__init__(message)
        self.bracket = bracket
        self.iterations = iterations


class CheckpointError(NitsError, ValueError):
    """A checkpoint file is malformed, truncated, or corrupted."""
