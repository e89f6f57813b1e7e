"""
Exception types shared by the library and the command line.

The CLI maps them onto exit codes:
- UsageError / ConfigError -> 2
- CapExceededError -> 3
"""
from typing import Optional


class UsageError(ValueError):
    """A call violated an operation's preconditions."""


class ConfigError(UsageError):
    """A config file, flag or distribution block failed to parse."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{where}: {message}"
        super().__init__(message)


class CapExceededError(UsageError):
    """A size cap (alphabet, free parameters, grid, blocklength) was exceeded."""
