"""Exception hierarchy shared by every stage of the pipeline."""


class EegDqnError(Exception):
    """Base class for all library errors."""


class InvalidParameterError(EegDqnError, ValueError):
    pass


class InvalidDataError(EegDqnError, ValueError):
    pass


class DegenerateInputError(EegDqnError, ValueError):
    pass


class InsufficientDataError(EegDqnError, ValueError):
    pass


class ConstantSignalError(DegenerateInputError):
    pass


class SingularMatrixError(EegDqnError, ArithmeticError):
    pass


class ConvergenceError(EegDqnError, ArithmeticError):
    pass


class NumericError(EegDqnError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class StateError(EegDqnError, RuntimeError):
    pass


class RangeError(EegDqnError, IndexError):
    pass


class FormatError(EegDqnError, ValueError):
    """A serialized file is malformed; ``offset`` points at the bad byte."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(EegDqnError, ValueError):
    def __init__(self, message, line=None, key=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.key = key
