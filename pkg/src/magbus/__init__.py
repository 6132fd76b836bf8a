"""Cavity-magnon coupling through a dissipative transmission-line bus."""
from .errors import (
    ConfigError,
    FitError,
    NumericalInstabilityError,
    SingularSystemError,
    StepSizeError,
    TraceFormatError,
)
from .model import REFERENCE, BusParams, ModeParams, SystemConfig, load_config, validate

__all__ = [
    "BusParams", "ConfigError", "FitError", "ModeParams", "NumericalInstabilityError",
    "REFERENCE", "SingularSystemError", "StepSizeError", "SystemConfig",
    "TraceFormatError", "load_config", "validate",
]
__version__ = "0.1.0"
