class UVForgeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(UVForgeError):
    """Tensor/map shapes are inconsistent with the requested operation."""


class InvariantError(UVForgeError):
    """A documented data invariant was violated (bad normals, NaNs, ...)."""


class ParseError(UVForgeError):
    """An input file could not be parsed; message carries the line number."""


class ConfigError(UVForgeError):
    """A run configuration failed schema validation."""
