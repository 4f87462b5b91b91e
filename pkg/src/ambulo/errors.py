"""Exception types raised across the pipeline."""


class AmbuloError(Exception):
    """Base class for all pipeline errors."""


class FormatError(AmbuloError):
    """An input file does not follow its expected record layout."""


class EmptySeriesError(AmbuloError):
    """Every row of an input file was rejected."""


class ParameterError(AmbuloError, ValueError):
    """A numeric parameter violates its domain (e.g. tau1 >= tau2)."""


class ConvergenceError(AmbuloError):
    """The deconvolution solver hit its iteration cap.

    ``last_residual`` carries the RMS residual at the final iterate.
    """

    def __init__(self, message: str, last_residual: float):
        super().__init__(message)
        self.last_residual = last_residual


class ConfigError(AmbuloError):
    """The pipeline configuration is invalid."""


class CoverageError(AmbuloError):
    """A requested time range is not covered by processed data."""
