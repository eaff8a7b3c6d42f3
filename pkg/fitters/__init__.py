"""
Preconditioner fitters: classic P-space fitters, Lie-group fitters and sparse forms.
"""

from .base import PreconditionerState, DirectSum
from .classic_fit import PState, ClosedFormState, RunningClosedFormState
from .lie_fit import LipschitzTracker, DenseQState, TriangularQState, InverseFreeQState
from .sparse_fit import DiagonalQ, KronQ, LraQ, precond_grad
from .registry import METHODS, build_preconditioner, build_direct_sum

__all__ = [
    'PreconditionerState', 'DirectSum', 'PState', 'ClosedFormState', 'RunningClosedFormState',
    'LipschitzTracker', 'DenseQState', 'TriangularQState', 'InverseFreeQState',
    'DiagonalQ', 'KronQ', 'LraQ', 'precond_grad', 'METHODS', 'build_preconditioner', 'build_direct_sum',
]
