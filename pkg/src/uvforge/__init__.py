"""uvforge: UV texture baking and multiview-to-UV attention on toy scenes."""

from .errors import (
    ConfigError,
    DimensionError,
    InvariantError,
    ParseError,
    UVForgeError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "InvariantError",
    "ParseError",
    "UVForgeError",
    "__version__",
]
