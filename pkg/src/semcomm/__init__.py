"""Semantic image communication on a small numpy autodiff engine."""

from .errors import (
    ConfigError,
    ContractError,
    CorruptionError,
    FormatError,
    GeometryError,
    SemcommError,
    ShapeError,
    StageError,
    StatisticsError,
)
from .labelmap import LabelMap

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "CorruptionError", "FormatError", "GeometryError", "LabelMap",
    "SemcommError", "ShapeError", "StageError", "StatisticsError",
]
