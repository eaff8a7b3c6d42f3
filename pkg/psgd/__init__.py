"""
PSGD optimizer loop and built-in problems.
"""

from .problems import Problem, quadratic_problem, trd_problem, planted_trd, near_saddle_start
from .psgd_core import (OptimizerConfig, PsgdState, StepStats, fd_hvp, init_scale, momentum_lr_scale,
                        update_momentum, psgd_step)

__all__ = [
    'Problem', 'quadratic_problem', 'trd_problem', 'planted_trd', 'near_saddle_start',
    'OptimizerConfig', 'PsgdState', 'StepStats', 'fd_hvp', 'init_scale', 'momentum_lr_scale',
    'update_momentum', 'psgd_step',
]
