"""Shared exception types mapped to CLI exit codes (see cli.py)."""

from .tensor import NumericsError, ShapeError


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class DataError(ValueError):
    """Malformed input data or dataset contract violation (CLI exit code 3)."""


__all__ = ["ConfigError", "DataError", "ShapeError", "NumericsError"]
