"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems to 2, data problems to 3
and numeric failures to 4.
"""


class DNBPError(Exception):
    """Base class for all package errors."""


class ConfigError(DNBPError):
    """Invalid configuration value, unknown key or malformed config file."""


class DataError(DNBPError):
    """Missing, malformed or mismatched on-disk data."""


class ShapeError(DNBPError, ValueError):
    """Tensor shape does not match what a layer expects."""

    def __init__(self, layer: str, expected, got):
        self.layer = layer
        self.expected = expected
        self.got = got
        super().__init__(f"{layer}: expected shape {expected}, got {tuple(got)}")


class NumericError(DNBPError, ArithmeticError):
    """Non-finite values where finite ones are required."""
