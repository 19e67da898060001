"""Exception types shared across the package."""


class LatentAnomError(Exception):
    """Base class for all package errors."""


class DataFormatError(LatentAnomError, ValueError):
    """A data file could not be parsed under its declared format."""


class ValidationError(LatentAnomError, ValueError):
    """Parsed data violates a content rule (non-finite cell, label mismatch)."""


class EmptyInputError(LatentAnomError, ValueError):
    pass


class ShapeError(LatentAnomError, ValueError):
    pass


class ParameterError(LatentAnomError, ValueError):
    pass


class MetricError(LatentAnomError, ValueError):
    pass


class CheckpointError(LatentAnomError, IOError):
    pass


class ConfigError(LatentAnomError, ValueError):
    pass


class TrainingAborted(LatentAnomError, RuntimeError):
    """Raised when a loss component becomes non-finite during training."""

    def __init__(self, message: str, component: str | None = None, epoch: int | None = None):
        super().__init__(message)
        self.component = component
        self.epoch = epoch
