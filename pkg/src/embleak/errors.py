"""Exception types shared across the toolkit."""


class EmbleakError(Exception):
    """Base class for data and contract errors raised by this package."""


class TraceFormatError(EmbleakError):
    """Malformed trace or profile input file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(EmbleakError):
    """Input file does not match the declared schema."""
