"""Shared exception types and the CLI exit-code partition."""

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_VALIDATION = 5
EXIT_NUMERIC = 6


class PosceError(Exception):
    """Base class for errors raised by this package."""

    exit_code = EXIT_VALIDATION
    error_class = "validation"


class ValidationError(PosceError):
    """Invalid argument, configuration, or data contract violation."""


class CapExceededError(ValidationError):
    """Exact enumeration requested beyond the hard player cap."""


class ParseError(PosceError):
    """A file failed to parse; carries the offending location."""

    exit_code = EXIT_PARSE
    error_class = "parse"

    def __init__(self, path, line, reason):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = str(path)
        self.line = line
        self.reason = reason


class NumericError(PosceError):
    """Non-finite values where finite tensors are required."""

    exit_code = EXIT_NUMERIC
    error_class = "numeric"
