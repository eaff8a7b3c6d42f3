"""
Base preconditioner interface.
All fitted preconditioner forms should inherit from this class.
"""

from abc import ABC, abstractmethod
from typing import List, Sequence, Tuple

import numpy as np
import scipy.linalg

from numerics.crit import HvpPair
from numerics.errors import DimensionError
from numerics.matkit import Matrix, Vector


def as_vector(x, dim: int, name: str = "g") -> Vector:
    """Flatten to a float64 vector of the expected length."""
    out = np.asarray(x, dtype=np.float64).reshape(-1)
    if out.size != dim:
        raise DimensionError(f"{name} has length {out.size}, expected {dim}")
    return out


class PreconditionerState(ABC):
    """Base class for all preconditioner forms and their fitter state."""

    method: str = ''

    def __init__(self, dim: int, mu: float):
        """Initialize the preconditioner with its dimension and fitting step size."""
        if dim < 1:
            raise DimensionError(f"preconditioner dimension must be >= 1, got {dim}")
        if mu <= 0:
            raise ValueError(f"fitting step size must be positive, got {mu}")
        self.dim = dim
        self.mu = mu
        self.steps = 0

    def set_mu(self, mu: float) -> None:
        if mu <= 0:
            raise ValueError(f"fitting step size must be positive, got {mu}")
        self.mu = mu

    def _check_pair(self, pair: HvpPair) -> None:
        if pair.dim != self.dim:
            raise DimensionError(f"{self.method}: pair has length {pair.dim}, expected {self.dim}")

    @abstractmethod
    def update(self, pair: HvpPair) -> None:
        """Fit the preconditioner to one (v, h) pair."""
        pass

    @abstractmethod
    def precond_grad(self, g) -> Vector:
        """Return P g."""
        pass

    @abstractmethod
    def dense_p(self) -> Matrix:
        """Return the dense preconditioner P."""
        pass

    def __repr__(self) -> str:
        return f"{type(self).__name__}(method={self.method!r}, dim={self.dim}, mu={self.mu}, steps={self.steps})"


class DirectSum(PreconditionerState):
    """Block-diagonal preconditioner: one independent form per parameter slice."""

    method = 'direct-sum'

    def __init__(self, blocks: Sequence[Tuple[slice, PreconditionerState]]):
        if not blocks:
            raise DimensionError("DirectSum needs at least one block")
        position = 0
        for block_slice, state in blocks:
            width = block_slice.stop - block_slice.start
            if block_slice.start != position or width != state.dim:
                raise DimensionError(f"block {block_slice} does not tile the parameter vector at {position}")
            position = block_slice.stop
        super().__init__(position, min(state.mu for _, state in blocks))
        self.blocks: List[Tuple[slice, PreconditionerState]] = list(blocks)
        self.method = '+'.join(sorted({state.method for _, state in blocks}))

    def set_mu(self, mu: float) -> None:
        super().set_mu(mu)
        for _, state in self.blocks:
            state.set_mu(mu)

    def update(self, pair: HvpPair) -> None:
        self._check_pair(pair)
        for block_slice, state in self.blocks:
            state.update(HvpPair(pair.v[block_slice], pair.h[block_slice]))
        self.steps += 1

    def precond_grad(self, g) -> Vector:
        g = as_vector(g, self.dim)
        return np.concatenate([state.precond_grad(g[block_slice]) for block_slice, state in self.blocks])

    def dense_p(self) -> Matrix:
        return scipy.linalg.block_diag(*(state.dense_p() for _, state in self.blocks))
