"""Error classes carrying the command-line exit code."""


class PipelineError(Exception):
    exit_code = 1
    code = "error"


class ConfigError(PipelineError, ValueError):
    exit_code = 2
    code = "config"


class DataError(PipelineError, ValueError):
    exit_code = 3
    code = "data"


class NumericalError(PipelineError, ArithmeticError):
    exit_code = 4
    code = "numerical"
