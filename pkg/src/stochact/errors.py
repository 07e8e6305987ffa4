"""Exception hierarchy shared by every module."""


class StochactError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(StochactError, ValueError):
    """Tensor shapes do not compose."""


class ConfigurationError(StochactError, ValueError):
    """A configuration value or spec is invalid."""


class ContractError(StochactError, RuntimeError):
    """A caller broke an API precondition (empty input, stale cache, ...)."""


class IngestionError(StochactError, IOError):
    """A dataset file could not be parsed."""


class IncompatibleFormatError(StochactError, IOError):
    """A persisted model has the wrong magic, version or is truncated."""


class InsufficientDataError(StochactError, ValueError):
    """Too few non-zero paired differences for a signed-rank test."""


class TrainingError(StochactError, RuntimeError):
    """Training diverged (non-finite loss or parameters)."""
