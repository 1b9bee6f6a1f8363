"""Exception types shared across the package."""


class ApLabError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ApLabError, ValueError):
    """Invalid detector configuration or trap model."""


class MalformedStreamError(ApLabError, ValueError):
    """Interval stream violates the pulse-period grammar."""


class EmptyHistogramError(ApLabError, ValueError):
    """No events survive trimming."""


class FitFailureError(ApLabError, RuntimeError):
    """Fit could not produce a usable outcome."""


class AllStartsFailedError(FitFailureError):
    """Every multistart attempt failed to converge.

    Carries per-start diagnostics in ``self.diagnostics`` (list of dicts).
    """

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class UndefinedStatisticError(ApLabError, ValueError):
    """Statistic is undefined for the given input (e.g. zero total variance)."""


class InconsistentFitError(ApLabError, ValueError):
    """Fitted parameters are inconsistent with the observed data."""


class FormatError(ApLabError, ValueError):
    """File content does not match the expected on-disk format."""
