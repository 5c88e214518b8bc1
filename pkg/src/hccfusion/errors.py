"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3.
"""


class FusionError(Exception):
    """Base class for all package errors."""


class ConfigError(FusionError):
    """Invalid configuration, flags, or referenced paths."""


class DataError(FusionError):
    """Malformed or inconsistent data encountered at runtime."""
