"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
to the documented process exit status without a lookup table.
"""


class GclError(Exception):
    exit_code = 1


class InvalidInputError(GclError, ValueError):
    exit_code = 2


class ConfigError(InvalidInputError):
    """Bad configuration value; ``path`` names the offending key."""

    exit_code = 2

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class DegenerateDataError(GclError, ValueError):
    exit_code = 3


class GenerationFailureError(GclError, RuntimeError):
    exit_code = 3


class StrategyMismatchError(InvalidInputError):
    exit_code = 3


class InapplicableStrategyError(InvalidInputError):
    exit_code = 2


class TrainingDivergenceError(GclError, FloatingPointError):
    exit_code = 4

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)


class DegenerateColumnError(GclError, ValueError):
    exit_code = 5

    def __init__(self, message, column=None):
        self.column = column
        super().__init__(message)


class EvaluationError(GclError, ArithmeticError):
    exit_code = 5


class FormatError(GclError, ValueError):
    """File does not carry the expected magic header or layout."""

    exit_code = 3
