"""Exception hierarchy shared by all modules.

The CLI maps ``ValidationError`` subclasses to exit code 2 and
``NumericError`` subclasses to exit code 3.
"""


class MlreactError(Exception):
    pass


class ValidationError(MlreactError, ValueError):
    """Bad parameters, bad config or malformed input."""


class ParameterError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class DataError(ValidationError):
    """Non-finite or otherwise unusable data values."""


class FitError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class RangeError(ValidationError, IndexError):
    pass


class AlignmentError(ValidationError):
    pass


class CoverageError(ValidationError):
    pass


class PartitionError(ValidationError):
    pass


class OracleUnavailableError(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class NumericError(MlreactError, ArithmeticError):
    pass


class SingularityError(NumericError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ConvergenceError(NumericError):
    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class DegenerateTestError(NumericError):
    pass


class LookaheadError(MlreactError, AssertionError):
    """A training label or feature postdates what the forecast may use."""
