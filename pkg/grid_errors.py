"""
grid_errors.py - Exception hierarchy for the gridshift simulator

Library code raises these; only main.py turns them into process exit codes.
Every class also derives from the closest builtin so callers that only know
about ValueError / OSError keep working.
"""

from typing import Optional


class GridShiftError(Exception):
    """Base class for every error raised by gridshift."""

    exit_code: int = 1


class ConfigError(GridShiftError, ValueError):
    """Configuration file, environment or CLI flags are invalid."""


class DataValidationError(GridShiftError, ValueError):
    """Input data parsed but violates a domain invariant."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ParseError(DataValidationError):
    """A CSV row could not be parsed (wrong column count, bad number, bad header)."""


class ContinuityError(DataValidationError):
    """Hourly timestamps are not strictly contiguous."""

    def __init__(self, message: str, index: int):
        self.index = index
        super().__init__(f"index {index}: {message}")


class DomainError(GridShiftError, ValueError):
    """An operation was called outside its precondition."""


class ContractViolation(DomainError):
    """A stage produced output that breaks the contract of the next stage."""


class InstanceTooLarge(DomainError):
    """Exact search guard tripped; the dp backend must be used instead."""


class InfeasibleError(GridShiftError):
    """Demand cannot be served, or an allocation cannot satisfy its caps."""

    exit_code = 2

    def __init__(self, message: str, hour: Optional[int] = None):
        self.hour = hour
        if hour is not None:
            message = f"hour {hour}: {message}"
        super().__init__(message)


class RunError(GridShiftError):
    """A batch run produced no usable day at all."""

    exit_code = 2


class ReportIOError(GridShiftError, OSError):
    """Reading or writing a file failed."""

    exit_code = 3

    def __init__(self, message: str, path: object):
        self.path = str(path)
        super().__init__(f"{message}: {self.path}")


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code (0 is never returned)."""
    if isinstance(error, GridShiftError):
        return error.exit_code
    if isinstance(error, OSError):
        return 3
    return 1
