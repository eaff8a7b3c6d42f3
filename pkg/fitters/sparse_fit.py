"""
Large-scale preconditioner forms: diagonal, two-factor Kronecker product and
low-rank approximation (LRA) Q = (I + U V^T) diag(d).

Kronecker forms act on a parameter vector of length m1*m2 reshaped
column-major to an m1 x m2 matrix, so Q = Q2 kron Q1 acts as X -> Q1 X Q2^T.
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from helpers.rng import SeededRng, as_rng
from numerics.crit import HvpPair
from numerics.errors import DimensionError, GroupExitError, SingularityError
from numerics.matkit import Matrix, Vector, estimate_spectral_norm, qr_upper_factor, symmetrize
from .base import PreconditionerState, as_vector
from .lie_fit import LipschitzTracker

logger = logging.getLogger(__name__)

DIAG_FLOOR = 1e-30
LRA_DET_EPS = 1e-12
KRON_MODES = ('qr', 'inverse-free')


def _clamp_nonzero(q: Vector) -> Vector:
    tiny = np.abs(q) < DIAG_FLOOR
    if tiny.any():
        q = q.copy()
        q[tiny] = np.where(q[tiny] < 0.0, -DIAG_FLOOR, DIAG_FLOOR)
    return q


def uvec(x: Vector, shape: Tuple[int, int]) -> Matrix:
    """Column-major reshape of a length m1*m2 vector."""
    if x.size != shape[0] * shape[1]:
        raise DimensionError(f"cannot reshape length {x.size} to {shape[0]}x{shape[1]}")
    return x.reshape(shape, order='F')


def vec(X: Matrix) -> Vector:
    return X.reshape(-1, order='F')


# Diagonal

class DiagonalQ(PreconditionerState):
    """Q = diag(q)."""

    method = 'diag'

    def __init__(self, q, mu: float = 1.0, beta: float = 0.0):
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        super().__init__(q.size, mu)
        self.q = _clamp_nonzero(q)
        self.tracker = LipschitzTracker(beta=beta)

    @classmethod
    def scaled_identity(cls, n: int, scale: float = 1.0, **kwargs) -> 'DiagonalQ':
        return cls(np.full(n, scale), **kwargs)

    def update(self, pair: HvpPair) -> None:
        self._check_pair(pair)
        diag_step(self, pair, self.mu)

    def precond_grad(self, g) -> Vector:
        return self.q * self.q * as_vector(g, self.dim)

    def dense_p(self) -> Matrix:
        return np.diag(self.q * self.q)


def diag_step(state: DiagonalQ, pair: HvpPair, mu: float) -> DiagonalQ:
    """q <- q - (mu/L)[(q h)^2 - (v/q)^2] q, elementwise."""
    a = state.q * pair.h
    b = pair.v / state.q
    a2 = a * a
    b2 = b * b
    s = state.tracker.step(mu, float(np.max(a2 + b2)))
    state.q = _clamp_nonzero(state.q - s * (a2 - b2) * state.q)
    state.steps += 1
    return state


# Kronecker product

class KronQ(PreconditionerState):
    """Q = Q2 kron Q1 over an m1 x m2 parameter matrix."""

    method = 'kron'

    def __init__(self, Q1, Q2, mu: float = 0.5, beta: float = 0.0, mode: str = 'qr',
                 balance: bool = True, rng: Optional[SeededRng] = None):
        if mode not in KRON_MODES:
            raise ValueError(f"mode must be one of {KRON_MODES}, got '{mode}'")
        Q1 = np.atleast_2d(np.asarray(Q1, dtype=np.float64))
        Q2 = np.atleast_2d(np.asarray(Q2, dtype=np.float64))
        super().__init__(Q1.shape[0] * Q2.shape[0], mu)
        if mode == 'qr':
            Q1, Q2 = np.triu(Q1), np.triu(Q2)
        self.Q1 = Q1.copy()
        self.Q2 = Q2.copy()
        self.trackers = (LipschitzTracker(beta=beta), LipschitzTracker(beta=beta))
        self.mode = mode
        self.balance = balance
        self.rng = as_rng(rng)
        if mode == 'inverse-free':
            self.method = 'kron-if'

    @classmethod
    def scaled_identity(cls, shape: Tuple[int, int], scale: float = 1.0, **kwargs) -> 'KronQ':
        m1, m2 = shape
        # scale splits evenly so that Q2 kron Q1 = scale I
        root = math.sqrt(scale)
        return cls(root * np.eye(m1), root * np.eye(m2), **kwargs)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.Q1.shape[0], self.Q2.shape[0]

    def update(self, pair: HvpPair) -> None:
        self._check_pair(pair)
        kron_step(self, pair, self.mu)

    def precond_grad(self, g) -> Vector:
        G = uvec(as_vector(g, self.dim), self.shape)
        return vec(self.Q1.T @ (self.Q1 @ G @ self.Q2.T) @ self.Q2)

    def dense_q(self) -> Matrix:
        return np.kron(self.Q2, self.Q1)

    def dense_p(self) -> Matrix:
        Q = self.dense_q()
        return Q.T @ Q


def kron_balance(state: KronQ) -> KronQ:
    """Rescale the factors to a common max-abs entry; the Kronecker product is unchanged."""
    n1 = np.abs(state.Q1).max()
    n2 = np.abs(state.Q2).max()
    if n1 > 0.0 and n2 > 0.0:
        gmean = math.sqrt(n1 * n2)
        state.Q1 = state.Q1 * (gmean / n1)
        state.Q2 = state.Q2 * (gmean / n2)
    return state


def _kron_qr_terms(state: KronQ, pair: HvpPair) -> Tuple[Matrix, Matrix]:
    Q1, Q2 = state.Q1, state.Q2
    if np.any(np.diag(Q1) == 0.0) or np.any(np.diag(Q2) == 0.0):
        raise SingularityError("Kronecker factor has a zero diagonal entry")
    A = Q1 @ uvec(pair.h, state.shape) @ Q2.T
    # B = Q2^{-T} uvec(v)^T Q1^{-1}
    Y = scipy.linalg.solve_triangular(Q2, uvec(pair.v, state.shape).T, trans='T', lower=False)
    B = scipy.linalg.solve_triangular(Q1, Y.T, trans='T', lower=False).T
    return A, B


def kron_step(state: KronQ, pair: HvpPair, mu: float) -> KronQ:
    """One Lie-group update of both Kronecker factors."""
    if state.balance:
        kron_balance(state)
    tracker1, tracker2 = state.trackers

    if state.mode == 'qr':
        A, B = _kron_qr_terms(state, pair)
        AAt, BtB = A @ A.T, B.T @ B
        AtA, BBt = A.T @ A, B @ B.T
        ell1 = estimate_spectral_norm(AAt + BtB, rng=state.rng)
        ell2 = estimate_spectral_norm(AtA + BBt, rng=state.rng)
        s1 = tracker1.step(mu, ell1)
        s2 = tracker2.step(mu, ell2)
        m1, m2 = state.shape
        R1 = qr_upper_factor(np.eye(m1) - s1 * (AAt - BtB))
        R2 = qr_upper_factor(np.eye(m2) - s2 * (AtA - BBt))
        state.Q1 = np.triu(R1 @ state.Q1)
        state.Q2 = np.triu(R2 @ state.Q2)
    else:
        P1 = state.Q1.T @ state.Q1
        P2 = state.Q2.T @ state.Q2
        A = P1 @ uvec(pair.h, state.shape) @ P2
        B = uvec(pair.v, state.shape).T
        AAt, BtB = A @ A.T, B.T @ B
        AtA, BBt = A.T @ A, B @ B.T
        s1 = tracker1.step(mu, estimate_spectral_norm(AAt, rng=state.rng)
                           + estimate_spectral_norm(BtB, rng=state.rng))
        s2 = tracker2.step(mu, estimate_spectral_norm(AtA, rng=state.rng)
                           + estimate_spectral_norm(BBt, rng=state.rng))
        state.Q1 = state.Q1 - s1 * (state.Q1 @ (AAt - BtB))
        state.Q2 = state.Q2 - s2 * (state.Q2 @ (AtA - BBt))
    state.steps += 1
    return state


# Low-rank approximation

class LraQ(PreconditionerState):
    """Q = (I + U V^T) diag(d) with U, V of shape n x r."""

    method = 'lra'
    BALANCE_EVERY = 100
    BALANCE_MU = 0.25

    def __init__(self, d, U, V, mu: float = 0.1, beta: float = 0.0):
        d = np.asarray(d, dtype=np.float64).reshape(-1)
        U = np.asarray(U, dtype=np.float64)
        V = np.asarray(V, dtype=np.float64)
        if U.ndim == 1:
            U, V = U.reshape(-1, 1), V.reshape(-1, 1)
        if U.shape != V.shape or U.shape[0] != d.size:
            raise DimensionError(f"U and V shapes differ: {U.shape} vs {V.shape}")
        super().__init__(d.size, mu)
        self.d = _clamp_nonzero(d)
        self.U = U.copy()
        self.V = V.copy()
        self.trackers = {name: LipschitzTracker(beta=beta) for name in ('d', 'U', 'V')}
        self.turn = 'U'
        self.check_group()

    @classmethod
    def scaled_identity(cls, n: int, rank: int = 10, scale: float = 1.0,
                        rng: Optional[SeededRng] = None, **kwargs) -> 'LraQ':
        rng = as_rng(rng)
        rank = min(rank, n)
        spread = math.sqrt(0.1 / max(n * rank, 1))
        U = spread * rng.standard_normal((n, rank))
        V = spread * rng.standard_normal((n, rank))
        return cls(np.full(n, scale), U, V, **kwargs)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def _core(self) -> Matrix:
        """I + V^T U."""
        return np.eye(self.rank) + self.V.T @ self.U

    def check_group(self) -> float:
        if self.rank == 0:
            return 1.0
        det = float(np.linalg.det(self._core()))
        if not abs(det) >= LRA_DET_EPS:
            raise GroupExitError(f"det(I + V^T U) = {det:.3e}")
        return det

    # Applications of Q, Q^T and their inverses

    def apply_q(self, x: Vector) -> Vector:
        y = self.d * x
        return y + self.U @ (self.V.T @ y)

    def apply_qt(self, x: Vector) -> Vector:
        return self.d * (x + self.V @ (self.U.T @ x))

    def apply_qinv(self, x: Vector) -> Vector:
        """diag(d)^{-1} (I - U (I + V^T U)^{-1} V^T) x."""
        if self.rank:
            x = x - self.U @ np.linalg.solve(self._core(), self.V.T @ x)
        return x / self.d

    def apply_qinv_t(self, x: Vector) -> Vector:
        """(I - V (I + U^T V)^{-1} U^T) diag(d)^{-1} x."""
        z = x / self.d
        if self.rank:
            z = z - self.V @ np.linalg.solve(self._core().T, self.U.T @ z)
        return z

    def update(self, pair: HvpPair) -> None:
        self._check_pair(pair)
        lra_step(self, pair, self.mu)

    def precond_grad(self, g) -> Vector:
        return self.apply_qt(self.apply_q(as_vector(g, self.dim)))

    def dense_q(self) -> Matrix:
        return (np.eye(self.dim) + self.U @ self.V.T) * self.d

    def dense_p(self) -> Matrix:
        Q = self.dense_q()
        return Q.T @ Q


def lra_step(state: LraQ, pair: HvpPair, mu: float) -> LraQ:
    """Update d, then one of U or V in strict alternation."""
    h, v = pair.h, pair.v
    a = state.apply_q(h)
    b = state.apply_qinv_t(v)
    Ph = state.apply_qt(a)
    Pinv_v = state.apply_qinv(b)

    hPh = h * Ph
    vPv = v * Pinv_v
    if state.rank:
        ell_d = float(np.max(np.abs(hPh)) + np.max(np.abs(vPv)))
    else:
        # Q is diagonal: same bound as diag_step
        ell_d = float(np.max(np.abs(hPh) + np.abs(vPv)))
    if ell_d > 0.0:
        s = state.trackers['d'].step(mu, ell_d)
        state.d = _clamp_nonzero((1.0 - s * (hPh - vPv)) * state.d)

    if state.rank:
        U, V = state.U, state.V
        if state.turn == 'U':
            Va, Vb = V @ (V.T @ a), V @ (V.T @ b)
            ell = float(np.linalg.norm(a) * np.linalg.norm(Va) + np.linalg.norm(b) * np.linalg.norm(Vb))
            if ell > 0.0:
                s = state.trackers['U'].step(mu, ell)
                grad = np.outer(a, a @ V) - np.outer(b, b @ V)
                state.U = U - s * (grad @ (np.eye(state.rank) + V.T @ U))
            state.turn = 'V'
        else:
            Ua, Ub = U @ (U.T @ a), U @ (U.T @ b)
            ell = float(np.linalg.norm(a) * np.linalg.norm(Ua) + np.linalg.norm(b) * np.linalg.norm(Ub))
            if ell > 0.0:
                s = state.trackers['V'].step(mu, ell)
                W = np.outer(a, a @ U) - np.outer(b, b @ U)
                state.V = V - s * (W + V @ (U.T @ W))
            state.turn = 'U'
        state.check_group()

    state.steps += 1
    if state.rank and state.steps % state.BALANCE_EVERY == 0:
        lra_balance(state, state.BALANCE_MU)
    return state


def lra_balance(state: LraQ, mu: float = 0.25) -> LraQ:
    """Nudge U^T U and V^T V toward each other while keeping U V^T nearly fixed."""
    if not 0.0 < mu <= 0.25:
        raise ValueError(f"balance step must be in (0, 0.25], got {mu}")
    U, V = state.U, state.V
    UtU, VtV = U.T @ U, V.T @ V
    total = float(np.trace(UtU) + np.trace(VtV))
    if total == 0.0:
        return state
    E = symmetrize(UtU - VtV) / total
    E2 = E @ E
    eye = np.eye(state.rank)
    state.U = U @ (eye - mu * E + 0.5 * mu * mu * E2)
    state.V = V @ (eye + mu * E + 0.5 * mu * mu * E2)
    return state


def precond_grad(form: PreconditionerState, g) -> Vector:
    """P g for any preconditioner form, using its structure."""
    return form.precond_grad(as_vector(g, form.dim))
