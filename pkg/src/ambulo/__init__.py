"""Multimodal pedestrian well-being pipeline: HRV, EDA decomposition, GPS walking
segments, arousal episodes, survey text processing and study reports."""

from .errors import (AmbuloError, ConfigError, ConvergenceError, CoverageError, EmptySeriesError, FormatError,
                     ParameterError)

__version__ = "0.1.0"

__all__ = [
    "AmbuloError", "ConfigError", "ConvergenceError", "CoverageError", "EmptySeriesError", "FormatError",
    "ParameterError", "__version__",
]
