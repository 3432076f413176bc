"""Exception types shared across the package."""


class PacnError(Exception):
    """Base class for all package errors."""


class ConfigError(PacnError):
    """A model/layer configuration is internally inconsistent."""


class UsageError(PacnError):
    """An operation was called with arguments violating its contract."""


class IngestionError(PacnError):
    """An input file could not be read or parsed."""


class TrainingError(PacnError):
    """Training hit a non-recoverable numerical condition."""
