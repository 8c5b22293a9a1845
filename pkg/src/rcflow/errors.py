"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: configuration and data
problems exit with 2, numeric failures with 3.
"""


class RcflowError(Exception):
    """Base class for all package errors."""


class ConfigError(RcflowError):
    """Invalid configuration, arguments, or dimension mismatches."""


class DataError(ConfigError):
    """Unusable input data (malformed files, degenerate statistics)."""


class NumericError(RcflowError):
    """Non-finite values or numerically singular intermediate results."""


class DivergenceError(NumericError):
    """A simulation or optimization left its admissible region."""
