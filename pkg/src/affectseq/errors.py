"""Exception types shared across the package."""


class AffectSeqError(Exception):
    """Base class for all package errors."""


class ValidationError(AffectSeqError):
    """Input violates a documented invariant (shape, range, NaN, ...)."""


class FormatError(AffectSeqError):
    """A binary file does not conform to its declared format."""


class StorageError(AffectSeqError):
    """I/O failure while reading or writing an artifact."""


class ParseError(AffectSeqError):
    """A text file (label CSV, config) could not be parsed.

    Carries the 1-based line number when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(AffectSeqError):
    """Invalid or inconsistent run configuration."""


class NumericError(AffectSeqError):
    """A non-finite value appeared where finite math was required."""


class InsufficientDataError(AffectSeqError):
    """Too few valid frames to compute the requested quantity."""
