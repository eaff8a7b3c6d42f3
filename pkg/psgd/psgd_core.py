"""
Preconditioned SGD loop.

Each step optionally refits the preconditioner on one (v, h) pair, then moves
theta along -P g. Pairs come from Hessian-vector products (exact or finite
difference), from the gradient itself (whitening) or from the momentum.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from fitters.base import PreconditionerState
from helpers.rng import SeededRng, as_rng
from numerics.crit import DampingConfig, HvpPair, damp_hvp
from numerics.errors import DivergenceError
from numerics.matkit import Vector
from .problems import Problem

logger = logging.getLogger(__name__)

MODES = ('hvp', 'whiten-grad', 'whiten-momentum')


@dataclass
class OptimizerConfig:
    """Knobs of one PSGD run."""
    mode: str = 'hvp'
    theta_lr: float = 0.1
    precond_lr: float = 0.1
    momentum_beta: float = 0.9
    fd_delta: Optional[float] = None
    update_prob: float = 1.0
    grad_clip: Optional[float] = None
    damping: DampingConfig = field(default_factory=DampingConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.theta_lr <= 0 or self.precond_lr <= 0:
            raise ValueError(f"learning rates must be positive: theta_lr={self.theta_lr}, "
                             f"precond_lr={self.precond_lr}")
        if not 0.0 <= self.momentum_beta < 1.0:
            raise ValueError(f"momentum_beta must be in [0, 1), got {self.momentum_beta}")
        if not 0.0 <= self.update_prob <= 1.0:
            raise ValueError(f"update_prob must be in [0, 1], got {self.update_prob}")
        if self.fd_delta is not None and self.fd_delta <= 0:
            raise ValueError(f"fd_delta must be positive, got {self.fd_delta}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError(f"grad_clip must be positive, got {self.grad_clip}")


@dataclass
class PsgdState:
    """Preconditioner plus the optimizer's own running state."""
    precond: PreconditionerState
    momentum: Optional[Vector] = None
    step: int = 0

    @classmethod
    def create(cls, precond: PreconditionerState, cfg: OptimizerConfig) -> 'PsgdState':
        """Start a run; the preconditioner adopts cfg.precond_lr."""
        precond.set_mu(cfg.precond_lr)
        return cls(precond=precond)


@dataclass(frozen=True)
class StepStats:
    loss: float
    grad_norm: float
    precond_updated: bool


def default_fd_delta(theta: Vector) -> float:
    return 1e-5 * (1.0 + float(np.max(np.abs(theta), initial=0.0)))


def fd_hvp(problem: Problem, theta, v, delta: Optional[float] = None) -> Vector:
    """(grad(theta + delta v) - grad(theta - delta v)) / (2 delta)."""
    theta = np.asarray(theta, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    delta = default_fd_delta(theta) if delta is None else delta
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return (problem.grad(theta + delta * v) - problem.grad(theta - delta * v)) / (2.0 * delta)


def init_scale(h1) -> float:
    """(h1^T h1 / n)^{-1/4}, the scale of Q0 = scale * I."""
    h1 = np.asarray(h1, dtype=np.float64).reshape(-1)
    energy = float(h1 @ h1) / h1.size
    if energy == 0.0 or not math.isfinite(energy):
        logger.warning(f"⚠️ init_scale: degenerate first response (mean energy {energy}); using 1.0")
        return 1.0
    return energy ** -0.25


def momentum_lr_scale(beta: float) -> float:
    """sqrt((1 + beta) / (1 - beta)): how much smaller the learning rate is under momentum whitening."""
    return math.sqrt((1.0 + beta) / (1.0 - beta))


def update_momentum(m: Optional[Vector], g: Vector, beta: float) -> Vector:
    """m <- beta m + (1 - beta) g, starting from m = 0."""
    if m is None:
        m = np.zeros_like(g)
    return beta * m + (1.0 - beta) * g


def sample_pair(problem: Problem, theta: Vector, cfg: OptimizerConfig, rng: SeededRng) -> HvpPair:
    """Draw v ~ N(0, I) and return the damped (v, H v) pair."""
    v = rng.standard_normal(problem.dim)
    if problem.hvp is not None:
        h = problem.hvp(theta, v)
    else:
        h = fd_hvp(problem, theta, v, cfg.fd_delta)
    return damp_hvp(HvpPair(v, h), cfg.damping, rng)


def psgd_step(problem: Problem, theta, state: PsgdState, cfg: OptimizerConfig,
              rng: Optional[SeededRng] = None) -> Tuple[Vector, PsgdState, StepStats]:
    """One preconditioned SGD step."""
    rng = as_rng(rng)
    theta = np.asarray(theta, dtype=np.float64)
    loss = problem.loss(theta)
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss at step {state.step}: {loss}")
    g = problem.grad(theta)

    if cfg.mode == 'whiten-momentum':
        state.momentum = update_momentum(state.momentum, g, cfg.momentum_beta)
        direction = state.momentum
    else:
        direction = g

    updated = cfg.update_prob >= 1.0 or (cfg.update_prob > 0.0 and rng.uniform() < cfg.update_prob)
    if updated:
        if cfg.mode == 'hvp':
            pair = sample_pair(problem, theta, cfg, rng)
        else:
            pair = damp_hvp(HvpPair(rng.standard_normal(problem.dim), direction), cfg.damping, rng)
        state.precond.update(pair)

    step = state.precond.precond_grad(direction)
    lr = cfg.theta_lr
    if cfg.grad_clip is not None:
        # cap ||P g|| at grad_clip
        norm = float(np.linalg.norm(step))
        if norm > cfg.grad_clip:
            lr *= cfg.grad_clip / norm
    theta = theta - lr * step
    state.step += 1
    return theta, state, StepStats(loss=loss, grad_norm=float(np.linalg.norm(g)), precond_updated=updated)
