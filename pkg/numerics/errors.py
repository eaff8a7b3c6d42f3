"""
Exception hierarchy shared by every hessfit module.
"""


class HessfitError(Exception):
    """Base class for all hessfit errors."""


class DimensionError(HessfitError, ValueError):
    """Empty matrix, shape mismatch or impossible reshape."""


class SymmetryError(HessfitError, ValueError):
    """A symmetric input was required."""


class SingularityError(HessfitError):
    """Factorization or solve failed on a singular matrix."""


class DefinitenessError(HessfitError):
    """A positive definite input was required."""


class DivergenceError(HessfitError):
    """An iteration escaped its convergence region or produced non-finite values."""


class CurvatureError(HessfitError):
    """BFGS curvature condition v^T h > 0 does not hold."""


class InvalidSampleError(HessfitError, ValueError):
    """Non-positive or non-finite Lipschitz sample."""


class GroupExitError(HessfitError):
    """An LRA factor left the group: det(I + V^T U) is numerically zero."""


class ConfigError(HessfitError, ValueError):
    """Invalid configuration value."""


class ScenarioError(ConfigError):
    """Unknown scenario, method, or an unsupported scenario/method pairing."""
