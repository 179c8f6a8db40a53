"""Exception types shared across the package."""


class RetrainError(Exception):
    """Base class for all errors raised by mabretrain."""


class DimensionError(RetrainError, ValueError):
    """Array shapes do not line up."""


class NumericError(RetrainError, ArithmeticError):
    """A computation produced NaN or infinity."""


class InvalidInputError(RetrainError, ValueError):
    """Arguments are outside the accepted domain."""


class FormatError(RetrainError, ValueError):
    """A data or checkpoint file could not be parsed."""


class ConfigError(RetrainError, ValueError):
    """An experiment configuration failed validation.

    ``problems`` holds every violation as ``(path, message)`` pairs.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"{path}: {msg}" for path, msg in self.problems]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
