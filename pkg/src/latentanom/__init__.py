"""Latent-variance perturbation for synthetic time-series anomalies.

A TCN-VAE learns normal windows; anomalies come from inflating the posterior
standard deviation before decoding and are patched back into the original
window where they deviate enough from it.
"""

from latentanom.errors import (
    CheckpointError,
    ConfigError,
    DataFormatError,
    EmptyInputError,
    MetricError,
    ParameterError,
    ShapeError,
    TrainingAborted,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataFormatError",
    "EmptyInputError",
    "MetricError",
    "ParameterError",
    "ShapeError",
    "TrainingAborted",
    "ValidationError",
    "__version__",
]
