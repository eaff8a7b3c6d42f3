"""
Fitters that work on P directly: Euclidean SGD, running and Riccati closed
forms, Newton-Schulz fitting, SPD-manifold SGD and the BFGS baseline.
"""

import logging
import math
from typing import Iterator, Optional, Tuple

import numpy as np

from numerics.crit import HvpPair, cholesky, criterion_gradient, spd_solve
from numerics.errors import CurvatureError, DefinitenessError, DivergenceError, SingularityError
from numerics.matkit import (Matrix, Vector, as_square, check_same_shape, newton_schulz_step, sym_eig,
                             sym_power, symmetrize)
from .base import PreconditionerState, as_vector

logger = logging.getLogger(__name__)

NEWTON_DIVERGENCE_GROWTH = 1e6
COMMUTE_TOL = 1e-12
MAX_HALVINGS = 30
DEFAULT_EMA_CLIP = 0.999


def euclid_sgd_step(P, pair: HvpPair, mu: float) -> Matrix:
    """P <- P - mu (h h^T - P^{-1} v v^T P^{-1})."""
    P = as_square(P, "P")
    return P - mu * criterion_gradient(P, pair)


class RunningClosedFormState:
    """Accumulator of P^{-2} = running average of h h^T."""

    def __init__(self, Pinv_sq, t: int = 0, ema_clip: float = DEFAULT_EMA_CLIP):
        if not 0.0 < ema_clip < 1.0:
            raise ValueError(f"ema_clip must be in (0, 1), got {ema_clip}")
        self.Pinv_sq = as_square(Pinv_sq, "Pinv_sq").copy()
        self.t = t
        self.ema_clip = ema_clip

    @classmethod
    def from_initial(cls, P0, ema_clip: float = DEFAULT_EMA_CLIP) -> 'RunningClosedFormState':
        P0 = as_square(P0, "P0")
        w, _ = sym_eig(P0)
        if w.min() <= 0.0:
            raise DefinitenessError("running closed form needs P0 positive definite")
        return cls(sym_power(P0, -2.0), ema_clip=ema_clip)


def running_closed_form_step(state: RunningClosedFormState, h) -> Tuple[RunningClosedFormState, Matrix]:
    """Pinv_sq <- gamma Pinv_sq + (1 - gamma) h h^T with gamma = min((t+1)/(t+2), ema_clip)."""
    h = as_vector(h, state.Pinv_sq.shape[0], "h")
    gamma = min((state.t + 1.0) / (state.t + 2.0), state.ema_clip)
    state.Pinv_sq = gamma * state.Pinv_sq + (1.0 - gamma) * np.outer(h, h)
    state.t += 1
    return state, sym_power(state.Pinv_sq, -0.5)


def riccati_solve(sum_vv, sum_hh) -> Matrix:
    """SPD P with P A P = B, A = sum_hh, B = sum_vv."""
    B = as_square(sum_vv, "sum_vv")
    A = as_square(sum_hh, "sum_hh")
    check_same_shape(("sum_vv", B), ("sum_hh", A))
    for name, M in (("sum_vv", B), ("sum_hh", A)):
        if sym_eig(M)[0].min() <= 0.0:
            raise DefinitenessError(f"riccati_solve needs {name} positive definite")
    A_half = sym_power(A, 0.5)
    A_mhalf = sym_power(A, -0.5)
    middle = sym_power(symmetrize(A_half @ B @ A_half), 0.5)
    return symmetrize(A_mhalf @ middle @ A_mhalf)


def _diagonal_in(V: Matrix, P: Matrix) -> Optional[Vector]:
    """Diagonal of V^T P V when P is diagonal in the basis V, else None."""
    B = V.T @ P @ V
    d = np.diag(B).copy()
    off = np.linalg.norm(B - np.diag(d))
    return d if off <= COMMUTE_TOL * max(np.linalg.norm(B), 1.0) else None


def newton_iterates(Hsq, P0, iters: int,
                    spectrum: Optional[Tuple[Vector, Matrix]] = None) -> Iterator[Matrix]:
    """
    Yield P_1, ..., P_iters of the Newton-Schulz fit, raising DivergenceError
    when ||P||_F grows 1e6-fold.

    When P0 is diagonal in the eigenbasis of Hsq, each eigenvalue follows
    p <- 1.5 p - 0.5 w p^3 on its own, which keeps P_t a polynomial in Hsq.
    spectrum = (w, V) with Hsq = V diag(w) V^T lets callers supply
    eigenvalues that are more accurate than eigh of a formed Hsq.
    """
    Hsq = as_square(Hsq, "Hsq")
    P = as_square(P0, "P0").copy()
    check_same_shape(("Hsq", Hsq), ("P0", P))
    limit = NEWTON_DIVERGENCE_GROWTH * np.linalg.norm(P)
    w, V = spectrum if spectrum is not None else sym_eig(Hsq)
    w = np.asarray(w, dtype=np.float64)
    p = _diagonal_in(V, P)
    if p is None:
        logger.debug("newton: P0 does not commute with Hsq, iterating on dense matrices")
    for t in range(iters):
        if p is not None:
            p = 1.5 * p - 0.5 * w * p ** 3
            norm = float(np.linalg.norm(p))
        else:
            P = newton_schulz_step(P, Hsq)
            norm = float(np.linalg.norm(P))
        if not math.isfinite(norm) or norm > limit:
            raise DivergenceError(f"Newton-Schulz diverged at iteration {t + 1} (||P||_F = {norm:.3e})")
        yield symmetrize((V * p) @ V.T) if p is not None else P


def newton_fit(Hsq, P0, iters: int, spectrum: Optional[Tuple[Vector, Matrix]] = None) -> Matrix:
    """Run newton_iterates to the end and return the last P."""
    P = as_square(P0, "P0").copy()
    for P in newton_iterates(Hsq, P0, iters, spectrum):
        pass
    return P


def spd_manifold_step(P, pair: HvpPair, mu: float) -> Matrix:
    """P <- P + P E + E P with E = -mu (P h h^T + h h^T P - v v^T P^{-1} - P^{-1} v v^T)."""
    P = as_square(P, "P")
    h, v = pair.h, pair.v
    w = spd_solve(P, v)
    half = np.outer(P @ h, h) - np.outer(v, w)  # P h h^T - v v^T P^{-1}
    E = -mu * (half + half.T)
    PE = P @ E
    return P + PE + PE.T


def bfgs_step(P, pair: HvpPair) -> Matrix:
    """Inverse BFGS update (I - rho v h^T) P (I - rho h v^T) + rho v v^T, rho = 1 / v^T h."""
    P = as_square(P, "P")
    h, v = pair.h, pair.v
    vh = float(v @ h)
    if not vh > 0.0:
        raise CurvatureError(f"curvature condition fails: v^T h = {vh:.3e}")
    rho = 1.0 / vh
    Ph = P @ h
    hPh = float(h @ Ph)
    # expanded product keeps the update O(n^2)
    out = P - rho * (np.outer(v, Ph) + np.outer(Ph, v)) + (rho * rho * hPh + rho) * np.outer(v, v)
    return symmetrize(out)


class PState(PreconditionerState):
    """
    Direct-P fitter driven by (v, h) pairs: euclid, spd or bfgs.

    euclid and spd steps that would leave the SPD cone are retried with a
    halved step size; `halvings` counts the retries.
    """

    METHODS = ('euclid', 'spd', 'bfgs')

    def __init__(self, P0, method: str = 'spd', mu: float = 0.1):
        if method not in self.METHODS:
            raise ValueError(f"method must be one of {self.METHODS}, got '{method}'")
        P0 = as_square(P0, "P0")
        super().__init__(P0.shape[0], mu)
        self.method = method
        self.P = P0.copy()
        self.skipped = 0
        self.halvings = 0

    def _spd_step(self, step, pair: HvpPair) -> Matrix:
        mu = self.mu
        for _ in range(MAX_HALVINGS + 1):
            P = step(self.P, pair, mu)
            try:
                cholesky(P)
                return P
            except SingularityError:
                mu *= 0.5
                self.halvings += 1
        raise DefinitenessError(f"{self.method}: no step size down to {mu:.3e} keeps P positive definite")

    def update(self, pair: HvpPair) -> None:
        self._check_pair(pair)
        if self.method == 'euclid':
            self.P = self._spd_step(euclid_sgd_step, pair)
        elif self.method == 'spd':
            self.P = self._spd_step(spd_manifold_step, pair)
        else:
            try:
                self.P = bfgs_step(self.P, pair)
            except CurvatureError as e:
                self.skipped += 1
                logger.debug(f"bfgs: step {self.steps} skipped ({e})")
        self.steps += 1

    def precond_grad(self, g) -> Vector:
        return self.P @ as_vector(g, self.dim)

    def dense_p(self) -> Matrix:
        return self.P.copy()


class ClosedFormState(PreconditionerState):
    """Running closed form (method 'closed') or Riccati closed form ('riccati') fed by pairs."""

    METHODS = ('closed', 'riccati')

    def __init__(self, P0, method: str = 'closed', ema_clip: float = DEFAULT_EMA_CLIP):
        if method not in self.METHODS:
            raise ValueError(f"method must be one of {self.METHODS}, got '{method}'")
        P0 = as_square(P0, "P0")
        super().__init__(P0.shape[0], 1.0)
        self.method = method
        self.P = P0.copy()
        self.running: Optional[RunningClosedFormState] = None
        if method == 'closed':
            self.running = RunningClosedFormState.from_initial(P0, ema_clip=ema_clip)
        # Riccati sums start from the pair (v, h) = (P0^{1/2} e_i, P0^{-1/2} e_i)
        self.sum_vv = P0.copy() if method == 'riccati' else None
        self.sum_hh = sym_power(P0, -1.0) if method == 'riccati' else None

    def update(self, pair: HvpPair) -> None:
        self._check_pair(pair)
        if self.method == 'closed':
            self.running, self.P = running_closed_form_step(self.running, pair.h)
        else:
            self.sum_vv += np.outer(pair.v, pair.v)
            self.sum_hh += np.outer(pair.h, pair.h)
            self.P = riccati_solve(self.sum_vv, self.sum_hh)
        self.steps += 1

    def precond_grad(self, g) -> Vector:
        return self.P @ as_vector(g, self.dim)

    def dense_p(self) -> Matrix:
        return self.P.copy()
