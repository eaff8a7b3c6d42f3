"""
Lie-group preconditioner fitters.

GL(n) and upper-triangular group SGD, plus the four inverse-free fitters
(qeq, quad1, quad2, qep). All share the Lipschitz step-size tracker:
each step is mu / L with L a running bound on the local curvature.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from helpers.rng import SeededRng, as_rng
from numerics.crit import HvpPair
from numerics.errors import DefinitenessError, InvalidSampleError, SingularityError
from numerics.matkit import (Matrix, Vector, as_square, procrustes_rotate, qr_upper_approx,
                             qr_upper_factor, symmetrize)
from .base import PreconditionerState, as_vector

logger = logging.getLogger(__name__)

WOODBURY_EPS = 1e-12
QINV_DRIFT_TOL = 1e-6
TRI_MODES = ('exact-qr', 'approx', 'triu-only')


@dataclass
class LipschitzTracker:
    """L <- max(beta L + (1 - beta) ell, ell)."""
    L: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")

    def update(self, ell: float) -> 'LipschitzTracker':
        if not math.isfinite(ell) or ell <= 0.0:
            raise InvalidSampleError(f"Lipschitz sample must be positive and finite, got {ell}")
        self.L = max(self.beta * self.L + (1.0 - self.beta) * ell, ell)
        return self

    def step(self, mu: float, ell: float) -> float:
        """Update with ell and return the normalized step mu / L."""
        return mu / self.update(ell).L


def tracker_update(tracker: LipschitzTracker, ell: float) -> LipschitzTracker:
    return tracker.update(ell)


def _sherman_morrison(Xinv: Matrix, u: Vector, w: Vector) -> Optional[Matrix]:
    """(X + u w^T)^{-1} from X^{-1}; None when the denominator vanishes."""
    Xinv_u = Xinv @ u
    denom = 1.0 + w @ Xinv_u
    if abs(denom) < WOODBURY_EPS:
        return None
    return Xinv - np.outer(Xinv_u, w @ Xinv) / denom


def _invert(Q: Matrix) -> Matrix:
    try:
        return scipy.linalg.inv(Q)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SingularityError(f"Q is singular: {e}")


class DenseQState(PreconditionerState):
    """P = Q^T Q with Q in GL(n); Q^{-1} kept current by rank-1 updates."""

    method = 'gl'

    def __init__(self, Q, mu: float = 1.0, beta: float = 0.0, integrate_out_v: bool = False):
        Q = as_square(Q, "Q")
        super().__init__(Q.shape[0], mu)
        self.Q = Q.copy()
        self.Qinv = _invert(self.Q)
        self.tracker = LipschitzTracker(beta=beta)
        self.integrate_out_v = integrate_out_v
        self.reinversions = 0

    @classmethod
    def scaled_identity(cls, n: int, scale: float = 1.0, **kwargs) -> 'DenseQState':
        return cls(scale * np.eye(n), **kwargs)

    def reinvert(self, reason: str) -> None:
        self.Qinv = _invert(self.Q)
        self.reinversions += 1
        logger.debug(f"gl: Q^-1 recomputed at step {self.steps} ({reason})")

    def update(self, pair: HvpPair) -> None:
        self._check_pair(pair)
        if self.integrate_out_v:
            gl_whiten_integrated_step(self, pair.h, self.mu)
        else:
            gl_step(self, pair, self.mu)

    def precond_grad(self, g) -> Vector:
        g = as_vector(g, self.dim)
        return self.Q.T @ (self.Q @ g)

    def dense_p(self) -> Matrix:
        return self.Q.T @ self.Q


def gl_step(state: DenseQState, pair: HvpPair, mu: float) -> DenseQState:
    """Q <- Q - (mu/L)(a a^T - b b^T) Q with a = Q h, b = Q^{-T} v."""
    Q, Qinv = state.Q, state.Qinv
    a = Q @ pair.h
    b = Qinv.T @ pair.v
    s = state.tracker.step(mu, float(a @ a + b @ b))

    aQ = a @ Q
    bQ = b @ Q
    state.Q = Q - s * np.outer(a, aQ) + s * np.outer(b, bQ)

    # Q_new = (Q + u1 aQ^T) + u2 bQ^T
    Qinv_new = _sherman_morrison(Qinv, -s * a, aQ)
    if Qinv_new is not None:
        Qinv_new = _sherman_morrison(Qinv_new, s * b, bQ)
    state.steps += 1
    if Qinv_new is None:
        state.reinvert("vanishing Woodbury denominator")
    else:
        state.Qinv = Qinv_new
        n = state.dim
        drift = np.linalg.norm(state.Q @ state.Qinv - np.eye(n))
        if drift > QINV_DRIFT_TOL * math.sqrt(n):
            state.reinvert(f"drift {drift:.2e}")
    return state


def gl_whiten_integrated_step(state: DenseQState, g: Vector, mu: float) -> DenseQState:
    """Gradient whitening with v integrated out: Q <- Q - (mu/L)(Q g g^T Q^T - Q^{-T} Q^{-1}) Q."""
    Q, Qinv = state.Q, state.Qinv
    a = Q @ g
    s = state.tracker.step(mu, float(a @ a + np.sum(Qinv * Qinv)))
    grad = np.outer(a, a) - Qinv.T @ Qinv
    state.Q = Q - s * (grad @ Q)
    state.steps += 1
    state.Qinv = _invert(state.Q)
    return state


class TriangularQState(PreconditionerState):
    """P = Q^T Q with Q upper triangular."""

    method = 'tri'

    def __init__(self, Q, mu: float = 1.0, beta: float = 0.0, mode: str = 'exact-qr'):
        if mode not in TRI_MODES:
            raise ValueError(f"mode must be one of {TRI_MODES}, got '{mode}'")
        Q = np.triu(as_square(Q, "Q"))
        super().__init__(Q.shape[0], mu)
        self.Q = Q.copy()
        self.tracker = LipschitzTracker(beta=beta)
        self.mode = mode

    @classmethod
    def scaled_identity(cls, n: int, scale: float = 1.0, **kwargs) -> 'TriangularQState':
        return cls(scale * np.eye(n), **kwargs)

    def update(self, pair: HvpPair) -> None:
        self._check_pair(pair)
        tri_step(self, pair, self.mu)

    def precond_grad(self, g) -> Vector:
        g = as_vector(g, self.dim)
        return self.Q.T @ (self.Q @ g)

    def dense_p(self) -> Matrix:
        return self.Q.T @ self.Q


def tri_step(state: TriangularQState, pair: HvpPair, mu: float) -> TriangularQState:
    """Q <- [I - (mu/L)(a a^T - b b^T)]_R Q with Q^T b = v solved by back-substitution."""
    Q = state.Q
    if np.any(np.diag(Q) == 0.0):
        raise SingularityError("triangular Q has a zero diagonal entry")
    a = Q @ pair.h
    b = scipy.linalg.solve_triangular(Q, pair.v, trans='T', lower=False)
    s = state.tracker.step(mu, float(a @ a + b @ b))
    delta = -s * (np.outer(a, a) - np.outer(b, b))

    if state.mode == 'exact-qr':
        R = qr_upper_factor(np.eye(state.dim) + delta)
    else:
        R = qr_upper_approx(delta, large_step=(state.mode == 'triu-only'))
    state.Q = np.triu(R @ Q)
    state.steps += 1
    return state


# Inverse-free fitters, P = Q^T Q

def _whiten_terms(Q: Matrix, pair: HvpPair):
    Ph = Q.T @ (Q @ pair.h)
    return Ph, pair.v


def qeq_step(Q: Matrix, tracker: LipschitzTracker, pair: HvpPair, mu: float) -> Matrix:
    """Q <- Q - (mu/L) Q (P h h^T P - v v^T)."""
    Ph, v = _whiten_terms(Q, pair)
    s = tracker.step(mu, float(Ph @ Ph + v @ v))
    return Q - s * (np.outer(Q @ Ph, Ph) - np.outer(Q @ v, v))


def quad1_step(Q: Matrix, tracker: LipschitzTracker, pair: HvpPair, mu: float,
               rotate_every: int = 32, step: int = 0, rotation_order: int = 3) -> Matrix:
    """Q <- Q - (mu/L)(P h h^T P - v v^T) Q, rotated back toward SPD every rotate_every steps."""
    Ph, v = _whiten_terms(Q, pair)
    s = tracker.step(mu, float(Ph @ Ph + v @ v))
    Q = Q - s * (np.outer(Ph, Ph @ Q) - np.outer(v, v @ Q))
    if rotate_every and (step + 1) % rotate_every == 0:
        Q = symmetrize(procrustes_rotate(Q, order=rotation_order))
    return Q


def quad2_step(Q: Matrix, tracker: LipschitzTracker, pair: HvpPair, mu: float) -> Matrix:
    """Q <- M Q M with M = I - (mu/2L)(P h h^T P - v v^T)."""
    Ph, v = _whiten_terms(Q, pair)
    s = tracker.step(mu, float(Ph @ Ph + v @ v))
    M = np.eye(Q.shape[0]) - 0.5 * s * (np.outer(Ph, Ph) - np.outer(v, v))
    return symmetrize(M @ Q @ M)


def qep_step(Q: Matrix, tracker: LipschitzTracker, pair: HvpPair, mu: float) -> Matrix:
    """Q <- Q - (mu/L) Q (P h h^T P - v v^T) Q^T Q."""
    Ph, v = _whiten_terms(Q, pair)
    a = Q @ Ph
    c = Q @ v
    s = tracker.step(mu, float(a @ a + c @ c))
    return Q - s * (np.outer(a, a @ Q) - np.outer(c, c @ Q))


def qep_whiten_integrated_step(Q: Matrix, tracker: LipschitzTracker, g: Vector, mu: float) -> Matrix:
    """Whitening qep with v integrated out: Q <- Q - (mu/L)(Q P g g^T P Q^T - Q Q^T) Q."""
    P = Q.T @ Q
    a = Q @ (P @ g)
    s = tracker.step(mu, float(a @ a) + float(np.linalg.norm(Q, 2)) ** 2)
    return Q - s * (np.outer(a, a @ Q) - Q @ P)


def quad3_step(P: Matrix, tracker: LipschitzTracker, pair: HvpPair, mu: float) -> Matrix:
    """Direct-P fit: P <- P - (mu/L)(P h h^T P - v v^T) P, symmetrized."""
    Ph = P @ pair.h
    v = pair.v
    s = tracker.step(mu, float(Ph @ Ph + v @ v))
    return symmetrize(P - s * (np.outer(Ph, Ph @ P) - np.outer(v, v @ P)))


class InverseFreeQState(PreconditionerState):
    """Q for the inverse-free fitters; P = Q^T Q (quad3 stores P itself)."""

    METHODS = ('qeq', 'quad1', 'quad2', 'qep', 'quad3')

    def __init__(self, Q, method: str = 'qep', mu: float = 0.1, beta: float = 1.0,
                 rotate_every: int = 32, rotation_order: int = 3, check_spd: bool = False,
                 integrate_out_v: bool = False):
        if method not in self.METHODS:
            raise ValueError(f"method must be one of {self.METHODS}, got '{method}'")
        if integrate_out_v and method != 'qep':
            raise ValueError(f"integrate_out_v is only defined for qep, got '{method}'")
        Q = as_square(Q, "Q")
        super().__init__(Q.shape[0], mu)
        self.method = method
        self.Q = Q.copy()
        self.tracker = LipschitzTracker(beta=beta)
        self.rotate_every = rotate_every
        self.rotation_order = rotation_order
        self.check_spd = check_spd
        self.integrate_out_v = integrate_out_v
        if method == 'quad3':
            logger.warning("⚠️ quad3 fits P directly; it can lose definiteness and is not a default method")

    @classmethod
    def scaled_identity(cls, n: int, scale: float = 1.0, method: str = 'qep', **kwargs) -> 'InverseFreeQState':
        # quad3 holds P = Q^2
        if method == 'quad3':
            scale = scale ** 2
        return cls(scale * np.eye(n), method=method, **kwargs)

    def update(self, pair: HvpPair) -> None:
        self._check_pair(pair)
        if self.method == 'qeq':
            self.Q = qeq_step(self.Q, self.tracker, pair, self.mu)
        elif self.method == 'quad1':
            self.Q = quad1_step(self.Q, self.tracker, pair, self.mu, rotate_every=self.rotate_every,
                                step=self.steps, rotation_order=self.rotation_order)
        elif self.method == 'quad2':
            self.Q = quad2_step(self.Q, self.tracker, pair, self.mu)
        elif self.method == 'qep' and self.integrate_out_v:
            self.Q = qep_whiten_integrated_step(self.Q, self.tracker, pair.h, self.mu)
        elif self.method == 'qep':
            self.Q = qep_step(self.Q, self.tracker, pair, self.mu)
        else:
            self.Q = quad3_step(self.Q, self.tracker, pair, self.mu)
        self.steps += 1
        if self.check_spd:
            try:
                np.linalg.cholesky(symmetrize(self.Q))
            except np.linalg.LinAlgError:
                raise DefinitenessError(f"{self.method}: Q lost positive definiteness at step {self.steps}")

    def precond_grad(self, g) -> Vector:
        g = as_vector(g, self.dim)
        if self.method == 'quad3':
            return self.Q @ g
        return self.Q.T @ (self.Q @ g)

    def dense_p(self) -> Matrix:
        if self.method == 'quad3':
            return self.Q.copy()
        return self.Q.T @ self.Q


def strong_convexity_probe(Q, H, trials: int = 256, rng: Optional[SeededRng] = None) -> float:
    """min over random unit symmetric E of tr(E^2 Q H^2 Q^T + 3 E^2 Q^{-T} Q^{-1})."""
    Q = as_square(Q, "Q")
    H = as_square(H, "H")
    rng = as_rng(rng)
    Qinv = _invert(Q)
    QH = Q @ H
    A = symmetrize(QH @ QH.T + 3.0 * Qinv.T @ Qinv)
    n = Q.shape[0]
    best = math.inf
    for _ in range(trials):
        X = rng.standard_normal((n, n))
        E = X + X.T
        E /= np.linalg.norm(E)
        best = min(best, float(np.sum((E @ E) * A)))
    return best
