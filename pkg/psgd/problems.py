"""
Built-in differentiable problems: quadratics and CP tensor rank decomposition.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from helpers.rng import SeededRng
from numerics.errors import DimensionError
from numerics.matkit import Matrix, Vector, as_square


@dataclass
class Problem:
    """Objective with gradient and, optionally, an exact Hessian-vector product."""
    dim: int
    loss: Callable[[Vector], float]
    grad: Callable[[Vector], Vector]
    hvp: Optional[Callable[[Vector, Vector], Vector]] = None
    name: str = 'problem'
    layout: Optional['TrdLayout'] = None


def quadratic_problem(H, b=None) -> Problem:
    """0.5 theta^T H theta - b^T theta."""
    H = as_square(H, "H")
    n = H.shape[0]
    b = np.zeros(n) if b is None else np.asarray(b, dtype=np.float64).reshape(-1)

    def loss(theta):
        return float(0.5 * theta @ H @ theta - b @ theta)

    def grad(theta):
        return H @ theta - b

    def hvp(theta, v):
        return H @ v

    return Problem(dim=n, loss=loss, grad=grad, hvp=hvp, name='quadratic')


class TrdLayout:
    """Packing of theta = concat(x, y, z) with x: R x I, y: R x J, z: R x K, row-major."""

    def __init__(self, R: int, I: int, J: int, K: int):
        if R <= 0:
            raise ValueError(f"rank R must be positive, got {R}")
        self.R, self.I, self.J, self.K = R, I, J, K
        self.sizes = (R * I, R * J, R * K)

    @property
    def dim(self) -> int:
        return sum(self.sizes)

    @property
    def factor_shapes(self) -> Tuple[Tuple[int, int], ...]:
        return (self.R, self.I), (self.R, self.J), (self.R, self.K)

    def unpack(self, theta: Vector) -> Tuple[Matrix, Matrix, Matrix]:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.dim:
            raise DimensionError(f"theta has length {theta.size}, expected {self.dim}")
        a, b = self.sizes[0], self.sizes[0] + self.sizes[1]
        return (theta[:a].reshape(self.R, self.I), theta[a:b].reshape(self.R, self.J),
                theta[b:].reshape(self.R, self.K))

    def pack(self, x: Matrix, y: Matrix, z: Matrix) -> Vector:
        return np.concatenate((x.reshape(-1), y.reshape(-1), z.reshape(-1)))


def trd_reconstruct(x: Matrix, y: Matrix, z: Matrix) -> np.ndarray:
    return np.einsum('ri,rj,rk->ijk', x, y, z)


def trd_problem(tensor, R: int) -> Problem:
    """Sum of squared residuals of a rank-R CP model of a 3-way tensor."""
    tau = np.asarray(tensor, dtype=np.float64)
    if tau.ndim != 3:
        raise DimensionError(f"tensor must be 3-way, got {tau.ndim} dimensions")
    layout = TrdLayout(R, *tau.shape)

    def loss(theta):
        x, y, z = layout.unpack(theta)
        residual = tau - trd_reconstruct(x, y, z)
        return float(np.sum(residual * residual))

    def grad(theta):
        x, y, z = layout.unpack(theta)
        residual = tau - trd_reconstruct(x, y, z)
        gx = -2.0 * np.einsum('ijk,rj,rk->ri', residual, y, z)
        gy = -2.0 * np.einsum('ijk,ri,rk->rj', residual, x, z)
        gz = -2.0 * np.einsum('ijk,ri,rj->rk', residual, x, y)
        return layout.pack(gx, gy, gz)

    return Problem(dim=layout.dim, loss=loss, grad=grad, hvp=None, name=f'trd-r{R}', layout=layout)


def planted_trd(R: int, I: int, J: int, K: int, rng: SeededRng) -> np.ndarray:
    """Tensor with an exact rank-R factorization from N(0, 1) factors."""
    x = rng.standard_normal((R, I))
    y = rng.standard_normal((R, J))
    z = rng.standard_normal((R, K))
    return trd_reconstruct(x, y, z)


def near_saddle_start(R: int, I: int, J: int, K: int, rng: SeededRng, eps: float = 1e-3) -> Vector:
    """x, y tiny and z random: a start close to the saddle at x = y = 0."""
    layout = TrdLayout(R, I, J, K)
    x = eps * rng.standard_normal((R, I))
    y = eps * rng.standard_normal((R, J))
    z = rng.standard_normal((R, K))
    return layout.pack(x, y, z)
