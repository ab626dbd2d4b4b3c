"""Exception classes shared across the toolkit.

The CLI maps these onto distinct exit codes, so keep the taxonomy small:
usage (caller misuse, bad shapes/configs), format (unparseable files),
data (numerically degenerate input). Plain OSError covers IO.
"""


class UsageError(ValueError):
    """API misuse: invalid argument combinations, mismatched state."""


class ShapeError(UsageError):
    """Tensor/array dimension or extent mismatch."""


class ConfigError(UsageError):
    """Invalid network or pipeline configuration."""


class FormatError(ValueError):
    """Malformed or inconsistent file content."""


class DataError(ValueError):
    """Numerically degenerate data (zero variance, non-finite values)."""
