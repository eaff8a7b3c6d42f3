"""
Seeded counter-based random streams.

Uniforms come from numpy's Philox bit generator; standard normals are produced
from those uniforms with the Box-Muller transform so a stream is fully defined
by its seed and draw order.
"""

import math
from typing import Optional, Tuple, Union

import numpy as np


Size = Optional[Union[int, Tuple[int, ...]]]

_SPAWN_MULTIPLIER = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


class SeededRng:
    """Deterministic random stream over Philox."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, size: Size = None):
        """Uniform draws in [0, 1)."""
        return self._gen.random(size)

    def standard_normal(self, size: Size = None):
        """Standard normal draws via Box-Muller."""
        count = 1 if size is None else int(np.prod(size))
        pairs = (count + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1], keeps log finite
        u2 = self._gen.random(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        z = np.concatenate((radius * np.cos(angle), radius * np.sin(angle)))[:count]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def normal(self, scale: float = 1.0, size: Size = None):
        """Zero-mean normal draws with the given standard deviation."""
        return scale * self.standard_normal(size)

    def orthogonal(self, n: int) -> np.ndarray:
        """Haar-distributed n x n orthogonal matrix: QR of a Gaussian matrix with R's signs moved into Q."""
        Q, R = np.linalg.qr(self.standard_normal((n, n)))
        return Q * np.sign(np.diag(R))

    def spawn(self, offset: int) -> 'SeededRng':
        """Derived stream, independent of this one for practical purposes."""
        return SeededRng((self.seed * _SPAWN_MULTIPLIER + int(offset) + 1) & _MASK64)


def as_rng(rng: Union['SeededRng', int, None], default_seed: int = 0) -> SeededRng:
    if isinstance(rng, SeededRng):
        return rng
    return SeededRng(default_seed if rng is None else rng)
