"""
Custom exceptions for ssb_guard
"""

from pathlib import Path
from typing import Any

from ssb_guard.constants import ERROR_CODES


class SsbGuardException(Exception):
    """Base exception for all ssb_guard errors"""

    def __init__(
        self,
        message: str,
        code: str | None = None,
        details: dict[str, Any] | None = None,
    ):
        self.message = message
        self.code = code or self.__class__.__name__
        self.details = details or {}
        super().__init__(self.message)

    def to_dict(self) -> dict[str, Any]:
        """Convert exception to dictionary for reports"""
        return {
            "error": self.code,
            "description": ERROR_CODES.get(self.code, "Unexpected error"),
            "message": self.message,
            "details": self.details,
        }


class ValidationException(SsbGuardException):
    """Raised when an argument violates an operation's precondition"""

    def __init__(self, field: str, reason: str):
        super().__init__(
            message=f"Validation failed for {field}: {reason}",
            code="VALIDATION_ERROR",
            details={
                "field": field,
                "reason": reason,
            },
        )


class ConfigException(SsbGuardException):
    """Raised when a configuration file or key cannot be used"""

    def __init__(self, key: str, reason: str):
        super().__init__(
            message=f"Invalid configuration {key}: {reason}",
            code="CONFIG_ERROR",
            details={
                "key": key,
                "reason": reason,
            },
        )


class FormatException(SsbGuardException):
    """Raised when a binary dataset or model file is malformed"""

    def __init__(
        self,
        path: str | Path,
        reason: str,
        offset: int | None = None,
        record: int | None = None,
    ):
        message = f"Malformed file {path}: {reason}"
        if record is not None:
            message += f" (record {record})"
        if offset is not None:
            message += f" at byte {offset}"
        super().__init__(
            message=message,
            code="FORMAT_ERROR",
            details={
                "path": str(path),
                "reason": reason,
                "offset": offset,
                "record": record,
            },
        )


class ParseException(SsbGuardException):
    """Raised when a text file has a malformed line"""

    def __init__(self, path: str | Path, line: int, reason: str):
        super().__init__(
            message=f"Parse error in {path} line {line}: {reason}",
            code="PARSE_ERROR",
            details={
                "path": str(path),
                "line": line,
                "reason": reason,
            },
        )


class NoSsbFoundException(SsbGuardException):
    """Raised when synchronization cannot locate an SSB in a capture"""

    def __init__(self, metric: float, threshold: float, reason: str | None = None):
        message = f"No SSB found: timing metric {metric:.4f} below {threshold}"
        if reason:
            message = f"No SSB found: {reason}"
        super().__init__(
            message=message,
            code="NO_SSB_FOUND",
            details={
                "metric": metric,
                "threshold": threshold,
                "reason": reason,
            },
        )


class FileMissingException(SsbGuardException):
    """Raised when an input dataset, model, threshold or capture file does not exist"""

    def __init__(self, path: str | Path):
        super().__init__(
            message=f"File not found: {path}",
            code="FILE_MISSING",
            details={"path": str(path)},
        )
