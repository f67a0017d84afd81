"""Exception hierarchy shared by all modules.

Each leaf class maps to a distinct CLI exit code (see ``cli.EXIT_CODES``).
"""

from __future__ import annotations


class WbanError(Exception):
    """Base class for all package errors."""


class BVHParseError(WbanError):
    """Malformed BVH text. Carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StructureError(WbanError):
    """Well-formed input whose contents violate a structural invariant."""


class GeometryError(WbanError):
    """Degenerate or impossible geometric configuration."""

    def __init__(self, message: str, frame: int | None = None):
        self.frame = frame
        if frame is not None:
            message = f"frame {frame}: {message}"
        super().__init__(message)


class InsufficientDataError(WbanError):
    """Too few samples for the requested computation."""


class DomainError(WbanError, ValueError):
    """Argument outside the mathematical domain of a formula."""


class CalibrationError(WbanError):
    """Scheduler calibration could not be completed."""


class ConfigError(WbanError):
    """Invalid scenario, policy or radio configuration."""


class ComparisonError(WbanError):
    """Reports cannot be compared (mismatched radio configuration)."""


class CSVFormatError(WbanError):
    """Malformed CSV input. Carries the 1-based row number."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
