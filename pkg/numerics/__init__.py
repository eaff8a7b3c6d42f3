"""
Dense matrix kit, fitting criterion and error types.
"""

from .errors import (
    HessfitError, DimensionError, SymmetryError, SingularityError, DefinitenessError,
    DivergenceError, CurvatureError, InvalidSampleError, GroupExitError, ConfigError,
    ScenarioError,
)

__all__ = [
    'HessfitError', 'DimensionError', 'SymmetryError', 'SingularityError', 'DefinitenessError',
    'DivergenceError', 'CurvatureError', 'InvalidSampleError', 'GroupExitError', 'ConfigError',
    'ScenarioError',
]
