"""Relational graph attention sequence tagger for aspect and opinion term extraction."""

from spantagger.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DegenerateNeighborhoodError,
    NumericError,
    ShapeError,
    SpantaggerError,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DegenerateNeighborhoodError",
    "NumericError",
    "ShapeError",
    "SpantaggerError",
]
