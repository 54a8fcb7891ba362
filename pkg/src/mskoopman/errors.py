"""Exception hierarchy shared across the package."""


class KoopmanError(Exception):
    """Base class for all package errors."""


class ContractViolation(KoopmanError, ValueError):
    """Raised when an argument breaks a documented precondition."""


class IntegrationOverflowError(KoopmanError, FloatingPointError):
    """Raised when a simulated trajectory produces non-finite values."""

    def __init__(self, message, trajectory=None, step=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


class DimensionCapError(KoopmanError, ValueError):
    """Raised when a dictionary would exceed the lifted-dimension cap."""


class UnsupportedConfigurationError(KoopmanError, ValueError):
    pass


class InfeasibleQPError(KoopmanError):
    """Raised when the affine constraints of a QP admit no feasible point.

    Attributes
    ----------
    violation : float
        Smallest achievable max-violation of the affine rows (> 0).
    multipliers : np.ndarray
        Nonnegative phase-1 dual multipliers certifying infeasibility.
    """

    def __init__(self, message, violation=None, multipliers=None):
        super().__init__(message)
        self.violation = violation
        self.multipliers = multipliers


class ModelFormatError(KoopmanError, ValueError):
    """Raised when a model file cannot be parsed or is inconsistent."""


class ConfigError(KoopmanError, ValueError):
    pass
