"""
Dense matrix utilities: norm bounds, spectral-norm estimation, triangular QR
factors, symmetric eigendecomposition, matrix-function iterations and online
orthogonal Procrustes rotations.

A Matrix is a 2-D float64 numpy array. Every function here is pure apart from
the random stream passed to estimate_spectral_norm.
"""

import math
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from helpers.rng import SeededRng, as_rng
from .errors import DefinitenessError, DimensionError, SingularityError, SymmetryError

logger = logging.getLogger(__name__)

Matrix = NDArray[np.float64]
Vector = NDArray[np.float64]

SYMMETRY_RTOL = 1e-10

# Procrustes step clamps, a*||R|| <= mu_max, per expansion order
PROCRUSTES_MU_MAX = {2: 0.25, 3: 5.0 / 8.0, 4: 1.1}
_C3 = (2.0 - math.sqrt(2.0)) / 4.0
_C4 = (3.0 - 2.0 * math.sqrt(2.0)) / 8.0


@dataclass(frozen=True)
class NormBounds:
    """Cheap lower and upper bounds of the spectral norm."""
    lower: float
    upper: float


def as_matrix(A, name: str = "A") -> Matrix:
    """Convert to a nonempty 2-D float64 array."""
    M = np.asarray(A, dtype=np.float64)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2 or M.size == 0:
        raise DimensionError(f"{name} must be a nonempty matrix, got shape {M.shape}")
    return M


def as_square(A, name: str = "A") -> Matrix:
    M = as_matrix(A, name)
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M


def check_same_shape(*pairs: Tuple[str, Matrix]) -> None:
    shape = pairs[0][1].shape
    for name, M in pairs[1:]:
        if M.shape != shape:
            raise DimensionError(f"{name} has shape {M.shape}, expected {shape}")


def symmetrize(A: Matrix) -> Matrix:
    return 0.5 * (A + A.T)


def spectral_norm_bounds(A) -> NormBounds:
    """Bounds of ||A||_2 from row/column norms and entrywise norms."""
    A = as_matrix(A)
    rows, cols = A.shape
    sq = A * A
    alpha = math.sqrt(max(sq.sum(axis=1).max(), sq.sum(axis=0).max()))
    abs_a = np.abs(A)
    upper = min(
        math.sqrt(min(rows, cols)) * alpha,
        math.sqrt(sq.sum()),
        math.sqrt(rows * cols) * abs_a.max(),
        math.sqrt(rows) * abs_a.sum(axis=0).max(),
        math.sqrt(cols) * abs_a.sum(axis=1).max(),
    )
    return NormBounds(lower=alpha, upper=max(upper, alpha))


def _alpha_oriented(A: Matrix) -> Tuple[Matrix, Vector, float]:
    """Return (B, a, alpha) where a is the alpha-achieving column of B and B is A or A^T."""
    sq = A * A
    col_sq = sq.sum(axis=0)
    row_sq = sq.sum(axis=1)
    if col_sq.max() >= row_sq.max():
        j = int(np.argmax(col_sq))
        return A, A[:, j].copy(), math.sqrt(col_sq[j])
    i = int(np.argmax(row_sq))
    return A.T, A[i, :].copy(), math.sqrt(row_sq[i])


def power_iteration_bound(A) -> float:
    """Single power step ||B B^T a|| / ||B^T a|| started at the alpha-achieving row/column."""
    A = as_matrix(A)
    B, a, alpha = _alpha_oriented(A)
    if alpha == 0.0:
        return 0.0
    y = B.T @ a
    ny = np.linalg.norm(y)
    if ny == 0.0:
        return 0.0
    return float(np.linalg.norm(B @ y) / ny)


def estimate_spectral_norm(A, subspace_dim: int = 32, iters: int = 4,
                           rng: Optional[SeededRng] = None) -> float:
    """
    Lower estimate of ||A||_2 by subspace iteration without orthogonalization.

    The centroid of the random starting block is reflected onto the
    alpha-achieving row/column before iterating. The result is never smaller
    than alpha or the single power-iteration bound.
    """
    if subspace_dim < 1 or iters < 1:
        raise ValueError(f"subspace_dim and iters must be >= 1, got {subspace_dim}, {iters}")
    A = as_matrix(A)
    B, a, alpha = _alpha_oriented(A)
    if alpha == 0.0:
        return 0.0
    rng = as_rng(rng)

    m = B.shape[0]
    k = min(subspace_dim, m)
    X = rng.standard_normal((m, k))

    # Householder reflection taking the block centroid direction onto a
    target = a / alpha
    centroid = X.mean(axis=1)
    nc = np.linalg.norm(centroid)
    if nc > 0.0:
        w = centroid / nc - target
        nw = np.linalg.norm(w)
        if nw > 1e-12:
            w /= nw
            X = X - 2.0 * np.outer(w, w @ X)

    best = max(alpha, power_iteration_bound(A))
    for _ in range(iters):
        Y = B.T @ X
        Z = B @ Y
        ny = np.linalg.norm(Y, axis=0)
        nz = np.linalg.norm(Z, axis=0)
        ok = ny > 0.0
        if not ok.any():
            break
        best = max(best, float((nz[ok] / ny[ok]).max()))
        scale = np.where(nz > 0.0, nz, 1.0)
        X = Z / scale
    return best


def sym_eig(A) -> Tuple[Vector, Matrix]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix."""
    A = as_square(A)
    fro = np.linalg.norm(A)
    if np.linalg.norm(A - A.T) > SYMMETRY_RTOL * fro:
        raise SymmetryError("sym_eig requires a symmetric matrix")
    w, V = scipy.linalg.eigh(symmetrize(A))
    return w, V


def sym_power(A, power: float, floor: Optional[float] = None) -> Matrix:
    """A**power for symmetric A through its eigendecomposition."""
    w, V = sym_eig(A)
    if floor is not None:
        w = np.maximum(w, floor)
    scale = max(np.abs(w).max(), np.finfo(float).tiny)
    if power < 0:
        if w.min() <= 0.0:
            raise DefinitenessError(f"negative power {power} needs a positive definite matrix "
                                    f"(lambda_min = {w.min():.3e})")
    elif not float(power).is_integer():
        if w.min() < -1e-12 * scale:
            raise DefinitenessError(f"fractional power {power} needs a positive semidefinite matrix "
                                    f"(lambda_min = {w.min():.3e})")
        w = np.maximum(w, 0.0)
    return symmetrize((V * w ** power) @ V.T)


def sym_abs(A) -> Matrix:
    """(A^2)^{1/2} for symmetric A."""
    w, V = sym_eig(A)
    return symmetrize((V * np.abs(w)) @ V.T)


def qr_upper_factor(A) -> Matrix:
    """R of A = Omega R with Omega orthogonal and a nonnegative diagonal on R."""
    A = as_square(A)
    n = A.shape[0]
    R = scipy.linalg.qr(A, mode='r')[0]
    diag = np.diag(R)
    scale = np.abs(diag).max()
    if scale == 0.0 or np.abs(diag).min() <= n * np.finfo(float).eps * scale:
        raise SingularityError("qr_upper_factor: matrix is rank deficient")
    signs = np.where(diag < 0.0, -1.0, 1.0)
    return np.triu(signs[:, None] * R)


def qr_upper_approx(Delta, large_step: bool = False) -> Matrix:
    """First-order [I + Delta]_R: I + triu(Delta) + triu(Delta, 1), or I + triu(Delta) for large steps."""
    Delta = as_square(Delta, "Delta")
    out = np.eye(Delta.shape[0]) + np.triu(Delta)
    if not large_step:
        out += np.triu(Delta, 1)
    return out


def newton_schulz_step(P, Hsq) -> Matrix:
    """P <- 1.5 P - 0.5 P Hsq P^2."""
    P = as_square(P, "P")
    Hsq = as_square(Hsq, "Hsq")
    check_same_shape(("P", P), ("Hsq", Hsq))
    return 1.5 * P - 0.5 * (P @ Hsq @ P @ P)


def inverse_fourth_root_step(Q, P, A) -> Matrix:
    """Q <- Q - 0.25 (P A P - I) Q."""
    Q = as_square(Q, "Q")
    P = as_square(P, "P")
    A = as_square(A, "A")
    check_same_shape(("Q", Q), ("P", P), ("A", A))
    residual = P @ A @ P - np.eye(Q.shape[0])
    return Q - 0.25 * (residual @ Q)


def _order4_step(t1: float, t2: float, t3: float, t4: float, a_max: float) -> float:
    """Smallest positive root of the cubic slope of tr(Omega Q) on (0, a_max], else a_max."""
    def slope(a):
        return t1 + a * t2 + 3.0 * _C3 * a * a * t3 + 4.0 * _C4 * a ** 3 * t4

    grid = np.linspace(0.0, a_max, 65)[1:]
    lo = 0.0
    for hi in grid:
        if slope(hi) <= 0.0:
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if slope(mid) > 0.0:
                    lo = mid
                else:
                    hi = mid
            return lo
        lo = hi
    return a_max


def procrustes_rotate(Q, order: int = 3) -> Matrix:
    """
    One online orthogonal Procrustes step toward the SPD polar factor of Q.

    Returns Omega Q with Omega a truncated expansion of exp(aR), R = Q^T - Q,
    and the step a chosen to increase tr(Omega Q), clamped so that
    a ||R|| <= mu_max keeps the orthogonality defect below 1e-3.
    """
    if order not in PROCRUSTES_MU_MAX:
        raise ValueError(f"order must be 2, 3 or 4, got {order}")
    Q = as_square(Q, "Q")
    R = Q.T - Q
    norm_r = float(np.linalg.norm(R, 2))
    if norm_r == 0.0:
        return Q.copy()
    a_max = PROCRUSTES_MU_MAX[order] / norm_r

    R2 = R @ R
    t1 = float(np.sum(R * Q.T))  # tr(RQ)
    t2 = float(np.sum(R2 * Q.T))
    n = Q.shape[0]
    eye = np.eye(n)

    if order == 2:
        a = a_max if t2 >= 0.0 else min(-t1 / t2, a_max)
        omega = eye + a * R + 0.5 * a * a * R2
    elif order == 3:
        R3 = R2 @ R
        t3 = float(np.sum(R3 * Q.T))
        if t3 < 0.0:
            disc = max(t2 * t2 - 1.5 * t1 * t3, 0.0)
            a = min((-t2 - math.sqrt(disc)) / (0.75 * t3), a_max)
        elif t2 < 0.0:
            a = min(-t1 / t2, a_max)
        else:
            a = a_max
        omega = eye + a * R + 0.5 * a * a * R2 + (a ** 3 / 8.0) * R3
    else:
        R3 = R2 @ R
        R4 = R2 @ R2
        t3 = float(np.sum(R3 * Q.T))
        t4 = float(np.sum(R4 * Q.T))
        a = _order4_step(t1, t2, t3, t4, a_max)
        omega = eye + a * R + 0.5 * a * a * R2 + _C3 * a ** 3 * R3 + _C4 * a ** 4 * R4
    return omega @ Q


def hilbert(n: int) -> Matrix:
    """Hilbert matrix H_ij = 1/(i+j-1), 1-based."""
    return scipy.linalg.hilbert(n)
