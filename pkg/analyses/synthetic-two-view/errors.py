"""Exceptions raised by the two-view depth analysis.

Every class carries the process exit code that `pipeline.py` returns for it:
2 for validation/parse problems, 3 for numerical failures.
"""
from __future__ import annotations

from typing import Any, Optional


class DepthError(Exception):
    exit_code = 1


class InvalidInputError(DepthError, ValueError):
    exit_code = 2


class ParseError(InvalidInputError):
    def __init__(self, path: str, line: Optional[int], message: str):
        location = path if line is None else f"{path}:{line}"
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line = line


class DegenerateGeometryError(InvalidInputError):
    pass


class SceneConfigurationError(InvalidInputError):
    pass


class InsufficientDataError(InvalidInputError):
    pass


class NumericalFailure(DepthError, RuntimeError):
    exit_code = 3


class NoOverlapError(NumericalFailure):
    def __init__(self, message: str, scale: Optional[int] = None):
        if scale is not None:
            message = f"{message} (scale {scale})"
        super().__init__(message)
        self.scale = scale


class DivergedOptimizationError(NumericalFailure):
    def __init__(self, message: str, trajectory: Optional[list] = None):
        super().__init__(message)
        self.trajectory = trajectory or []


class GradientCheckFailure(NumericalFailure):
    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report
