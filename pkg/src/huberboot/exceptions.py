"""Exception hierarchy shared across the package."""


class HuberbootError(Exception):
    """Base class for all package errors."""


class DomainError(HuberbootError, ValueError):
    """An argument lies outside the domain of a loss or rule."""


class ShapeError(HuberbootError, ValueError):
    """Array dimensions do not agree."""


class ConfigurationError(HuberbootError, ValueError):
    """Invalid configuration (empty grid, bad block count, non-PD correlation...)."""


class NumericalError(HuberbootError, RuntimeError):
    """A numerical routine could not produce a usable answer."""


class SingularSystemError(NumericalError):
    """Normal equations are singular (rank-deficient design)."""


class DegenerateDataError(NumericalError):
    """Residuals collapse to zero, so no robustification parameter can be calibrated."""


class CalibrationError(NumericalError):
    """A censored equation has no positive root for the requested confidence parameter."""


class BootstrapFailureError(NumericalError):
    """Too many bootstrap replications failed to converge."""


class DegenerateDataWarning(UserWarning):
    """Emitted when a rule returns a degenerate value (e.g. tau == 0)."""
