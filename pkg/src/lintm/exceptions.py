"""Exception hierarchy. Each family maps onto one CLI exit code."""


class LintmError(Exception):
    exit_code = 1


class ConfigError(LintmError, ValueError):
    """Invalid hyperparameters, infeasible splits or malformed experiment files."""

    exit_code = 2

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class CompatibilityError(ConfigError):
    """A checkpoint and a corpus disagree on the vocabulary."""


class DataError(LintmError, ValueError):
    exit_code = 3


class IngestionError(DataError):
    pass


class DistributionError(DataError):
    """Input is not a valid probability vector (or cannot be normalized into one)."""


class DimensionError(LintmError, ValueError):
    exit_code = 3


class NumericError(LintmError, ArithmeticError):
    """A loss or activation became non-finite."""

    exit_code = 4
