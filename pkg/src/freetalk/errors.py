"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class FreeTalkError(Exception):
    exit_code = 1


class ConfigError(FreeTalkError, ValueError):
    exit_code = 2


class DataError(FreeTalkError, ValueError):
    exit_code = 3


class FormatError(DataError):
    """Malformed or unrecognised file contents."""


class NumericalError(FreeTalkError, ArithmeticError):
    exit_code = 4
