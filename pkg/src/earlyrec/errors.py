"""Exception types raised across the package."""


class EarlyRecError(Exception):
    """Base class for all package errors."""


class InvalidInputError(EarlyRecError, ValueError):
    """Input rejected: wrong dimensions, out-of-range index, bad probability."""


class DatasetParseError(EarlyRecError, ValueError):
    """A dataset or checkpoint file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DatasetFormatError(EarlyRecError, ValueError):
    """A parsed record is inconsistent with its header."""

    def __init__(self, message, record=None):
        self.record = record
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)


class ConfigError(EarlyRecError, ValueError):
    """Bad run configuration (unknown key, wrong type)."""


class MissingArtifactError(EarlyRecError, FileNotFoundError):
    """An upstream pipeline artifact is missing."""
