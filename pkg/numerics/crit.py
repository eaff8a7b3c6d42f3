"""
Preconditioner fitting criterion c(P) = h^T P h + v^T P^{-1} v, its gradient,
its closed-form optimum and the damping regularizer for Hessian-vector pairs.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from helpers.rng import SeededRng, as_rng
from .errors import DefinitenessError, DimensionError, SingularityError
from .matkit import Matrix, Vector, as_square, check_same_shape, sym_eig, symmetrize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HvpPair:
    """Probe vector v and its (possibly noisy) Hessian-vector product h."""
    v: Vector
    h: Vector

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64).reshape(-1)
        h = np.asarray(self.h, dtype=np.float64).reshape(-1)
        if v.shape != h.shape:
            raise DimensionError(f"v and h lengths differ: {v.size} vs {h.size}")
        object.__setattr__(self, 'v', v)
        object.__setattr__(self, 'h', h)

    @property
    def dim(self) -> int:
        return self.v.size


@dataclass(frozen=True)
class DampingConfig:
    """Noise injected into h: nu ~ N(0, eta^2 I + machine_eps^2 diag(h^2))."""
    eta: float = 1e-9
    machine_eps: float = float(np.finfo(np.float64).eps) / 2.0

    def __post_init__(self):
        if self.eta < 0 or self.machine_eps < 0:
            raise ValueError(f"damping parameters must be nonnegative: eta={self.eta}, eps={self.machine_eps}")


NO_DAMPING = DampingConfig(eta=0.0, machine_eps=0.0)


def _check_pair(P: Matrix, pair: HvpPair) -> None:
    if P.shape[0] != pair.dim:
        raise DimensionError(f"P is {P.shape[0]}x{P.shape[0]} but the pair has length {pair.dim}")


def cholesky(P: Matrix) -> Tuple[Matrix, bool]:
    """Cholesky factor of an SPD matrix; failure is reported as SingularityError."""
    try:
        return scipy.linalg.cho_factor(P, lower=False, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SingularityError(f"Cholesky factorization failed: {e}")


def spd_solve(P: Matrix, b) -> np.ndarray:
    """P^{-1} b through a Cholesky solve."""
    return scipy.linalg.cho_solve(cholesky(P), b)


def sym_solve(P: Matrix, b) -> np.ndarray:
    """P^{-1} b for a symmetric P that need not be definite."""
    try:
        return scipy.linalg.solve(P, b, assume_a='sym', check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SingularityError(f"symmetric solve failed: {e}")


def criterion_eval(P, pair: HvpPair) -> float:
    """h^T P h + v^T P^{-1} v."""
    P = as_square(P, "P")
    _check_pair(P, pair)
    Pinv_v = sym_solve(P, pair.v)
    return float(pair.h @ P @ pair.h + pair.v @ Pinv_v)


def criterion_gradient(P, pair: HvpPair) -> Matrix:
    """h h^T - P^{-1} v v^T P^{-1}."""
    P = as_square(P, "P")
    _check_pair(P, pair)
    w = sym_solve(P, pair.v)
    return np.outer(pair.h, pair.h) - np.outer(w, w)


def expected_criterion(P, Hsq, noise_cov) -> float:
    """tr(P (Hsq + noise_cov) + P^{-1})."""
    P = as_square(P, "P")
    Hsq = as_square(Hsq, "Hsq")
    noise_cov = as_square(noise_cov, "noise_cov")
    check_same_shape(("P", P), ("Hsq", Hsq), ("noise_cov", noise_cov))
    Pinv = spd_solve(P, np.eye(P.shape[0]))
    return float(np.sum(P * (Hsq + noise_cov).T) + np.trace(Pinv))


def optimal_preconditioner(Hsq, noise_cov=None) -> Matrix:
    """(Hsq + noise_cov)^{-1/2}, the minimizer of the expected criterion."""
    Hsq = as_square(Hsq, "Hsq")
    A = Hsq if noise_cov is None else Hsq + as_square(noise_cov, "noise_cov")
    check_same_shape(("Hsq", Hsq), ("Hsq + noise_cov", A))
    w, V = sym_eig(A)
    if w.min() <= 0.0:
        raise DefinitenessError(f"Hsq + noise_cov is not positive definite (lambda_min = {w.min():.3e})")
    return symmetrize((V / np.sqrt(w)) @ V.T)


def damp_hvp(pair: HvpPair, cfg: DampingConfig, rng: Optional[SeededRng] = None) -> HvpPair:
    """Return (v, h + nu) with nu ~ N(0, eta^2 I + eps^2 diag(h^2))."""
    if cfg.eta == 0.0 and cfg.machine_eps == 0.0:
        return pair
    rng = as_rng(rng)
    std = np.sqrt(cfg.eta ** 2 + (cfg.machine_eps * pair.h) ** 2)
    nu = std * rng.standard_normal(pair.dim)
    return HvpPair(pair.v, pair.h + nu)
