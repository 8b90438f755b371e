"""Exception types raised across the package."""


class BalwtError(Exception):
    pass


class InvalidInput(BalwtError, ValueError):
    """Array shapes, non-finite values or broken centering."""


class InvalidHyperparameter(BalwtError, ValueError):
    pass


class SchemaError(BalwtError, ValueError):
    pass


class ParseError(BalwtError, ValueError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class InvalidSplit(BalwtError, ValueError):
    pass


class ConvergenceError(BalwtError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    The last iterate is kept on the exception so callers can inspect it.
    """

    def __init__(self, message, last_iterate=None, iterations=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class NotDiagonalError(BalwtError, ValueError):
    pass


class InfeasibleError(BalwtError, ValueError):
    def __init__(self, message, delta_min=None):
        super().__init__(message)
        self.delta_min = delta_min


class DegenerateWeights(BalwtError, ValueError):
    pass
