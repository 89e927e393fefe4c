"""
Exception hierarchy shared by the library layer and the command line
"""


class WassCauseError(Exception):
    """Base error; exit_code is what the CLI returns for it"""
    exit_code = 1


# Usage errors (exit 2)

class UsageError(WassCauseError):
    """Invalid flag combination or argument value"""
    exit_code = 2


class ConfigError(WassCauseError):
    """Invalid simulation config field"""
    exit_code = 2

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


# Data errors (exit 3)

class DataError(WassCauseError):
    exit_code = 3


class InsufficientData(DataError):
    pass


class DomainViolation(DataError):
    pass


class GridMismatch(DataError):
    pass


class SchemaError(DataError):
    """Input file does not match the expected schema"""

    def __init__(self, column: str, message: str):
        self.column = column
        super().__init__(f"{column}: {message}")


class NotFound(DataError):
    pass


# Numerical failures (exit 4)

class NumericalError(WassCauseError):
    exit_code = 4


class SeparationError(NumericalError):
    """Logistic fit diverges (complete separation or an empty arm)"""
    pass


class SingularDesign(NumericalError):
    pass


class FoldDegenerate(NumericalError):
    """A cross-fitting training complement lacks one treatment arm"""
    pass
