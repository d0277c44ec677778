"""Exceptions raised by the Deep Embedding Forest toolkit."""

from __future__ import annotations

from typing import Any


class DefError(Exception):
    """Base class for toolkit errors."""


class ValidationError(DefError, ValueError):
    """User input that cannot be accepted."""


class ParseError(ValidationError):
    """A text document could not be parsed."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ValidationError):
    """A configuration value failed validation."""


class ShapeError(ValidationError):
    """Vector, matrix or schema dimensions disagree."""


class StageDependencyError(ValidationError):
    """A pipeline stage was run before the stage it depends on."""


class ModelFormatError(DefError):
    """A model file is truncated, corrupted or of an unknown version."""


class TrainingDivergedError(DefError):
    """The training loss became non-finite."""

    def __init__(self, message: str, last_good: Any = None) -> None:
        super().__init__(message)
        self.last_good = last_good


class BenchError(DefError):
    """The latency benchmark could not run as configured."""
