"""Exception hierarchy.

Every error carries an ``exit_code`` that the command line maps to the
process status: 1 for usage/configuration problems, 2 for bad data and
3 for numerical failures.
"""


class SzadError(Exception):
    exit_code = 2


class ConfigError(SzadError, ValueError):
    """Invalid configuration value; ``field`` names the offender."""

    exit_code = 1

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DataError(SzadError, ValueError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.path = path


class ShapeError(DataError):
    pass


class SizeError(DataError):
    pass


class BandError(DataError):
    pass


class LabelError(DataError):
    pass


class SplitError(DataError):
    pass


class SchemeError(DataError):
    pass


class CorruptModelError(DataError):
    pass


class NumericError(SzadError, ArithmeticError):
    exit_code = 3


class UnknownSubjectError(DataError, LookupError):
    pass
