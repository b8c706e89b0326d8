from numpy.linalg import LinAlgError

__all__ = [
    "PermSaddleError",
    "DomainError",
    "NotPositiveDefinite",
    "DegenerateScores",
    "SingularCovariance",
    "OverflowGuard",
    "NoConvergence",
    "LevelUnreachable",
    "DegenerateDirection",
    "NonpositiveG",
    "TooLarge",
    "InvalidStatistic",
    "MalformedCsv",
    "MixedArity",
]


class PermSaddleError(Exception):
    """
    Root of every error raised by permsaddle.

    The ``code`` attribute is the class name; the command-line interface reports it
    in its machine-readable error object.
    """

    @property
    def code(self):
        return type(self).__name__


class DomainError(PermSaddleError, ValueError):
    pass


class NotPositiveDefinite(PermSaddleError, LinAlgError):
    pass


class DegenerateScores(PermSaddleError, ValueError):
    pass


class SingularCovariance(PermSaddleError, ValueError):
    pass


class OverflowGuard(PermSaddleError, FloatingPointError):
    pass


class NoConvergence(PermSaddleError, ArithmeticError):
    pass


class LevelUnreachable(PermSaddleError, ArithmeticError):
    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class DegenerateDirection(PermSaddleError, ArithmeticError):
    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class NonpositiveG(PermSaddleError, ArithmeticError):
    pass


class TooLarge(PermSaddleError, ValueError):
    pass


class InvalidStatistic(PermSaddleError, ValueError):
    pass


class MalformedCsv(PermSaddleError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MixedArity(PermSaddleError, ValueError):
    pass
