"""Exception hierarchy shared by every cst_seld module."""


class SeldError(Exception):
    """
    Base class for all errors raised by cst_seld.

    Attributes
    ----------
    exit_code : int
        Process exit status used by the command-line interface when the
        error escapes a subcommand.
    """

    exit_code: int = 1


class ConfigurationError(SeldError, ValueError):
    """Invalid configuration value, unknown key, or shape/divisibility violation."""

    exit_code = 2


class UsageError(SeldError, RuntimeError):
    """API misuse, such as replaying a consumed autodiff graph."""

    exit_code = 2


class DataError(SeldError, ValueError):
    """Malformed or incompatible input data (audio, labels, CSV, caches)."""

    exit_code = 3


class EmptyInputError(DataError):
    """Input too short or empty to produce a single frame."""


class LabelError(DataError):
    """Label content that violates the multi-ACCDOA track limits."""


class MetricsUndefinedError(DataError):
    """Metrics requested for a reference set with no events."""


class NumericError(SeldError, ArithmeticError):
    """Non-finite values in a tensor primitive or a diverging loss."""

    exit_code = 4
