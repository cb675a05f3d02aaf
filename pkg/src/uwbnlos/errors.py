"""Exception hierarchy shared by all modules."""


class UwbNlosError(Exception):
    """Base class for every error raised by this package."""


class DomainError(UwbNlosError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(UwbNlosError, ValueError):
    """Invalid or inconsistent configuration."""


class NoSignalError(UwbNlosError, ValueError):
    """A waveform (or window of it) carries no usable signal."""


class DegenerateKurtosisError(NoSignalError):
    """The magnitude over the observation window is constant."""


class ParseError(UwbNlosError, ValueError):
    """Malformed file content; ``record`` is the 1-based line/record index."""

    def __init__(self, message, record=None):
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


class FitError(UwbNlosError, ArithmeticError):
    """A regression/fit is rank deficient or otherwise ill-posed."""


class DataError(UwbNlosError, LookupError):
    """Required data is missing, e.g. an empty link pool."""
