"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class SemimmError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SemimmError):
    """Invalid or unresolvable experiment configuration."""


class DataError(SemimmError):
    """Malformed, missing or inconsistent data files / manifests."""


class ShapeError(DataError, ValueError):
    """Operand shapes incompatible with the requested operation."""


class NumericalError(SemimmError):
    """A non-finite value surfaced where only finite values are legal."""
