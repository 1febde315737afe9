"""Python access to the sensor monitoring core."""

from ._shv import (
    Database,
    Error,
    LevelDictionary,
    RawPoint,
    SensorCache,
    SensorId,
    TimedValue,
    Topic,
    Unit,
    __version__,
    bench,
    convert,
    parse_expr,
    wire,
)

__all__ = [
    "Database",
    "Error",
    "LevelDictionary",
    "RawPoint",
    "SensorCache",
    "SensorId",
    "TimedValue",
    "Topic",
    "Unit",
    "__version__",
    "bench",
    "convert",
    "parse_expr",
    "wire",
]
