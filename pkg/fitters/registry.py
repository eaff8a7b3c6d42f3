"""
Method-name registry: builds a fitted preconditioner state from a method name.
"""

from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from helpers.rng import SeededRng, as_rng
from numerics.errors import ScenarioError
from .base import DirectSum, PreconditionerState
from .classic_fit import ClosedFormState, DEFAULT_EMA_CLIP, PState
from .lie_fit import DenseQState, InverseFreeQState, TriangularQState
from .sparse_fit import DiagonalQ, KronQ, LraQ


@dataclass(frozen=True)
class MethodSpec:
    """Defaults for one fitter method."""
    name: str
    family: str
    mu: float
    beta: float
    description: str


METHODS: Dict[str, MethodSpec] = {spec.name: spec for spec in (
    MethodSpec('euclid', 'classic', 0.1, 0.0, 'Euclidean SGD on P'),
    MethodSpec('closed', 'classic', 1.0, 0.0, 'running closed form (h h^T average)^{-1/2}'),
    MethodSpec('riccati', 'classic', 1.0, 0.0, 'Riccati closed form from accumulated sums'),
    MethodSpec('newton', 'classic', 1.0, 0.0, 'Newton-Schulz iteration on the exact Hessian'),
    MethodSpec('spd', 'classic', 0.1, 0.0, 'SGD on the SPD manifold'),
    MethodSpec('bfgs', 'classic', 1.0, 0.0, 'inverse BFGS update'),
    MethodSpec('gl', 'lie', 1.0, 0.0, 'GL(n) group SGD'),
    MethodSpec('tri', 'lie', 1.0, 0.0, 'upper-triangular group SGD'),
    MethodSpec('qeq', 'lie', 0.1, 1.0, 'inverse-free dQ = Q E'),
    MethodSpec('quad1', 'lie', 0.1, 1.0, 'inverse-free dQ = E Q with Procrustes rotations'),
    MethodSpec('quad2', 'lie', 0.1, 1.0, 'inverse-free quadratic form Q <- M Q M'),
    MethodSpec('qep', 'lie', 1.0, 1.0, 'inverse-free dQ = Q E P'),
    MethodSpec('quad3', 'lie', 0.1, 1.0, 'direct-P quadratic fit (not a default)'),
    MethodSpec('diag', 'sparse', 1.0, 0.0, 'diagonal Q'),
    MethodSpec('kron', 'sparse', 0.5, 0.0, 'Kronecker product Q2 kron Q1, QR retraction'),
    MethodSpec('kron-if', 'sparse', 0.1, 0.0, 'Kronecker product, inverse-free'),
    MethodSpec('lra', 'sparse', 0.1, 0.0, 'low-rank approximation (I + U V^T) diag(d)'),
)}

# Methods consuming (v, h) pairs through PreconditionerState.update
PAIR_METHODS = tuple(name for name in METHODS if name != 'newton')


def validate_method(method: str) -> MethodSpec:
    """Validate that the method is registered."""
    if method not in METHODS:
        raise ScenarioError(f"Unsupported method '{method}'. Supported methods: {', '.join(METHODS)}")
    return METHODS[method]


def build_preconditioner(method: str, n: int, scale: float = 1.0, mu: Optional[float] = None,
                         beta: Optional[float] = None, rng: Optional[SeededRng] = None,
                         options: Optional[Dict[str, Any]] = None) -> PreconditionerState:
    """Create the state of `method` with P0 = scale^2 I (Q0 = scale I)."""
    spec = validate_method(method)
    if method == 'newton':
        raise ScenarioError("newton iterates on the exact Hessian and has no pair-driven state")
    options = dict(options or {})
    mu = spec.mu if mu is None else mu
    beta = spec.beta if beta is None else beta
    rng = as_rng(rng)
    P0 = scale * scale * np.eye(n)

    if method in ('euclid', 'spd', 'bfgs'):
        return PState(P0, method=method, mu=mu)
    if method in ('closed', 'riccati'):
        return ClosedFormState(P0, method=method, ema_clip=float(options.get('ema_clip', DEFAULT_EMA_CLIP)))
    if method == 'gl':
        return DenseQState.scaled_identity(n, scale, mu=mu, beta=beta,
                                           integrate_out_v=bool(options.get('integrate_out_v', False)))
    if method == 'tri':
        return TriangularQState.scaled_identity(n, scale, mu=mu, beta=beta,
                                                mode=options.get('tri_mode', 'exact-qr'))
    if method in InverseFreeQState.METHODS:
        return InverseFreeQState.scaled_identity(n, scale, method=method, mu=mu, beta=beta,
                                                 rotate_every=int(options.get('rotate_every', 32)),
                                                 check_spd=bool(options.get('check_spd', False)),
                                                 integrate_out_v=bool(options.get('integrate_out_v', False)))
    if method == 'diag':
        return DiagonalQ.scaled_identity(n, scale, mu=mu, beta=beta)
    if method in ('kron', 'kron-if'):
        shape = options.get('shape') or _square_shape(n)
        if shape[0] * shape[1] != n:
            raise ScenarioError(f"Kronecker shape {shape} does not match dimension {n}")
        return KronQ.scaled_identity(tuple(shape), scale, mu=mu, beta=beta,
                                     mode='qr' if method == 'kron' else 'inverse-free', rng=rng)
    return LraQ.scaled_identity(n, rank=int(options.get('rank', 10)), scale=scale, rng=rng, mu=mu, beta=beta)


def build_direct_sum(method: str, shapes: Sequence[Tuple[int, int]], scale: float = 1.0,
                     mu: Optional[float] = None, beta: Optional[float] = None,
                     rng: Optional[SeededRng] = None,
                     options: Optional[Dict[str, Any]] = None) -> DirectSum:
    """One block of `method` per matrix-shaped parameter group, all starting at the same scale."""
    rng = as_rng(rng)
    blocks = []
    start = 0
    for index, shape in enumerate(shapes):
        size = shape[0] * shape[1]
        block_options = dict(options or {})
        block_options['shape'] = tuple(shape)
        state = build_preconditioner(method, size, scale=scale, mu=mu, beta=beta,
                                     rng=rng.spawn(index), options=block_options)
        blocks.append((slice(start, start + size), state))
        start += size
    return DirectSum(blocks)


def _square_shape(n: int) -> Tuple[int, int]:
    m1 = int(np.floor(np.sqrt(n)))
    while n % m1:
        m1 -= 1
    return m1, n // m1
