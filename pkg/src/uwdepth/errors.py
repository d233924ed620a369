"""Exception types shared across the package, mapped to CLI exit codes."""

EXIT_OK = 0
EXIT_DATA = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


class UwdepthError(Exception):
    """Base class for errors raised by this package."""

    exit_code = EXIT_DATA


class DataError(UwdepthError):
    """Bad input data: undecodable files, missing paths, invalid depth values."""

    exit_code = EXIT_DATA


class ShapeError(UwdepthError):
    """Tensor shape violates an operation's contract."""

    exit_code = EXIT_DATA


class ConfigError(UwdepthError):
    """Bad configuration: unknown keys, checkpoint mismatches, unknown backbones."""

    exit_code = EXIT_CONFIG


class NumericalError(UwdepthError):
    """Non-finite values encountered during optimization."""

    exit_code = EXIT_NUMERIC


class UndefinedMetricError(UwdepthError):
    """Metric is undefined for the given inputs (e.g. zero variance)."""

    exit_code = EXIT_DATA


class EvaluationError(UwdepthError):
    """No image in the evaluation set produced a defined metric."""

    exit_code = EXIT_DATA
