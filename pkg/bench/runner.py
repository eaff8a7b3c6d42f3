"""
Scenario runner.

A run drives one fitter (or optimizer) through a registered protocol and
records a convergence curve: one point per iteration below 1000, then every
10th, plus the final iteration.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np

from fitters.classic_fit import newton_iterates
from fitters.registry import build_direct_sum, build_preconditioner
from helpers.logger import BenchLogger
from helpers.rng import SeededRng
from numerics.crit import HvpPair
from numerics.errors import DivergenceError, HessfitError
from numerics.matkit import sym_eig, sym_power
from psgd.problems import near_saddle_start, planted_trd, trd_problem
from psgd.psgd_core import OptimizerConfig, PsgdState, fd_hvp, init_scale, psgd_step
from .scenarios import (TRD_DEFAULTS, ScenarioConfig, TimeVaryingHessian, fitting_distance, fitting_error,
                        ground_truth, make_hessian, whitening_condition)

DENSE_LOG_UNTIL = 1000
LOG_EVERY = 10
KAPPA_EVERY = 100
DIVERGENCE_FACTOR = 10.0
DIVERGENCE_FLOOR = 1e-8
NEWTON_P0 = 0.02
GD_GRID = (0.1, 0.25, 0.5, 1.0, 1.5)
GD_POWER_ITERS = 20


@dataclass(frozen=True)
class CurvePoint:
    iter: int
    metric: float
    wall_ns: int = 0
    diverged: bool = False


@dataclass
class RunResult:
    """Curve of one run plus what the runner learned along the way."""
    config: ScenarioConfig
    points: List[CurvePoint]
    notes: Dict[str, Any] = field(default_factory=dict)

    @property
    def diverged(self) -> bool:
        return any(point.diverged for point in self.points)

    @property
    def final_metric(self) -> float:
        return self.points[-1].metric if self.points else math.nan


def should_log(t: int, iters: int) -> bool:
    return t < DENSE_LOG_UNTIL or t % LOG_EVERY == 0 or t == iters


class CurveRecorder:
    """
    Collects curve points and applies the divergence rule.

    With a floor (fitting curves) a point is flagged once it exceeds
    DIVERGENCE_FACTOR x max(running minimum, floor). Without one the point
    must also exceed the first metric.
    """

    def __init__(self, timing: bool, floor: Optional[float] = None):
        self.timing = timing
        self.floor = floor
        self.start = time.perf_counter_ns()
        self.points: List[CurvePoint] = []
        self.first: Optional[float] = None
        self.running_min = math.inf

    def _wall(self) -> int:
        return time.perf_counter_ns() - self.start if self.timing else 0

    def add(self, t: int, metric: float) -> CurvePoint:
        metric = float(metric)
        if self.first is None:
            self.first = metric
        if self.floor is not None:
            grown = metric > DIVERGENCE_FACTOR * max(self.running_min, self.floor)
        else:
            grown = metric > DIVERGENCE_FACTOR * self.running_min and metric > self.first
        flagged = not math.isfinite(metric) or grown
        if math.isfinite(metric):
            self.running_min = min(self.running_min, metric)
        point = CurvePoint(iter=t, metric=metric, wall_ns=self._wall(), diverged=flagged)
        self.points.append(point)
        return point

    def fail(self, t: int) -> CurvePoint:
        point = CurvePoint(iter=t, metric=math.inf, wall_ns=self._wall(), diverged=True)
        self.points.append(point)
        return point


def run_scenario(cfg: ScenarioConfig) -> List[CurvePoint]:
    """Execute one configured run and return its convergence curve."""
    return run_scenario_result(cfg).points


def run_scenario_result(cfg: ScenarioConfig) -> RunResult:
    cfg = cfg.validate()
    bench_logger = BenchLogger(cfg.scenario, cfg.method, cfg.seed)
    kind = cfg.spec.kind
    bench_logger.log(f"▶️ start: n={cfg.n} iters={cfg.iters} mu={cfg.mu} beta={cfg.beta} "
                     f"sigma_eps={cfg.sigma_eps}", "DEBUG")
    if kind == 'trd':
        result = _run_trd(cfg, bench_logger)
    elif cfg.method == 'newton':
        result = _run_newton(cfg, bench_logger)
    else:
        result = _run_pairs(cfg, bench_logger)
    if result.diverged:
        bench_logger.log(f"⚠️ divergence flagged; final metric {result.final_metric:.3e}", "WARNING")
    else:
        bench_logger.log(f"✅ done: final metric {result.final_metric:.3e}")
    return result


def _run_newton(cfg: ScenarioConfig, bench_logger: BenchLogger) -> RunResult:
    """Newton-Schulz on the exact H^2 from P0 = 0.02 I, iterated in the eigenbasis of H."""
    H = make_hessian(_hessian_kind(cfg), SeededRng(cfg.seed).spawn(3), cfg.n)
    H_prime = ground_truth(H, cfg.sigma_eps)
    lam, V = sym_eig(H)
    Hsq = H @ H + cfg.sigma_eps ** 2 * np.eye(cfg.n)
    P0 = NEWTON_P0 * np.eye(cfg.n)
    metric = _fit_metric(cfg.options().get('metric', 'err'))
    recorder = CurveRecorder(cfg.timing, floor=DIVERGENCE_FLOOR)
    recorder.add(0, metric(P0, H_prime))
    t = 0
    try:
        for t, P in enumerate(newton_iterates(Hsq, P0, cfg.iters, spectrum=(lam ** 2 + cfg.sigma_eps ** 2, V)),
                              start=1):
            if should_log(t, cfg.iters):
                recorder.add(t, metric(P, H_prime))
    except DivergenceError as e:
        bench_logger.log(f"❌ {e}", "WARNING")
        recorder.fail(t + 1)
    return RunResult(cfg, recorder.points)


def _hessian_kind(cfg: ScenarioConfig) -> str:
    return cfg.extra.get('hessian', cfg.spec.hessian)


def _fit_metric(name: str) -> Callable[[np.ndarray, np.ndarray], float]:
    return fitting_distance if name == 'dist' else fitting_error


def direction_stream(rng: SeededRng, n: int, draws: str = 'gaussian') -> Iterator[np.ndarray]:
    """
    Endless stream of v ~ N(0, I), or with draws='orthogonal' the columns of
    sqrt(n) x a fresh Haar orthogonal matrix, n at a time.
    """
    while True:
        if draws == 'orthogonal':
            yield from (math.sqrt(n) * rng.orthogonal(n)).T
        else:
            yield rng.standard_normal(n)


def _run_pairs(cfg: ScenarioConfig, bench_logger: BenchLogger) -> RunResult:
    """Pair-driven fitting and whitening scenarios."""
    rng = SeededRng(cfg.seed)
    pair_rng, noise_rng, stream_rng, init_rng = rng.spawn(1), rng.spawn(2), rng.spawn(3), rng.spawn(4)
    source = make_hessian(_hessian_kind(cfg), stream_rng, cfg.n)
    stream = source if isinstance(source, TimeVaryingHessian) else None
    H = stream.current if stream is not None else source
    whiten = cfg.spec.kind == 'whiten'

    options = cfg.options()
    fit_metric = _fit_metric(options.pop('metric', 'err'))
    directions = direction_stream(pair_rng, cfg.n, options.pop('draws', 'gaussian'))
    scale = math.sqrt(float(options.pop('p0', 1.0)))
    state = build_preconditioner(cfg.method, cfg.n, scale=scale, mu=cfg.mu, beta=cfg.beta,
                                 rng=init_rng, options=options)
    if whiten:
        H_half = sym_power(H, 0.5)

        def metric(P):
            return whitening_condition(P, H)
    else:
        H_prime = ground_truth(H, cfg.sigma_eps)

        def metric(P):
            return fit_metric(P, H_prime)

    recorder = CurveRecorder(cfg.timing, floor=None if whiten else DIVERGENCE_FLOOR)
    recorder.add(0, metric(state.dense_p()))
    for t in range(1, cfg.iters + 1):
        v = next(directions)
        if whiten:
            h = H_half @ noise_rng.standard_normal(cfg.n)
        else:
            h = H @ v
            if cfg.sigma_eps > 0.0:
                h = h + cfg.sigma_eps * noise_rng.standard_normal(cfg.n)
        try:
            state.update(HvpPair(v, h))
        except HessfitError as e:
            bench_logger.log(f"❌ fitter failed at iteration {t}: {e}", "WARNING")
            recorder.fail(t)
            break

        if should_log(t, cfg.iters) and (not whiten or t % KAPPA_EVERY == 0 or t == cfg.iters):
            if stream is not None:
                H_prime = ground_truth(H, cfg.sigma_eps)
            point = recorder.add(t, metric(state.dense_p()))
            if not math.isfinite(point.metric):
                break
        if stream is not None:
            H = stream.advance()

    notes = {'skipped': getattr(state, 'skipped', 0)}
    return RunResult(cfg, recorder.points, notes)


def _trd_setup(cfg: ScenarioConfig):
    dims = {key: cfg.extra_int(key, value) for key, value in TRD_DEFAULTS.items()}
    rng = SeededRng(cfg.seed)
    tensor = planted_trd(dims['R'], dims['I'], dims['J'], dims['K'], rng.spawn(1))
    theta0 = near_saddle_start(dims['R'], dims['I'], dims['J'], dims['K'], rng.spawn(2))
    return trd_problem(tensor, dims['R']), theta0, rng


def estimate_curvature(problem, theta, rng: SeededRng, iters: int = GD_POWER_ITERS) -> float:
    """Largest |eigenvalue| of the Hessian at theta by power iteration on finite-difference products."""
    v = rng.standard_normal(problem.dim)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iters):
        w = fd_hvp(problem, theta, v)
        estimate = float(np.linalg.norm(w))
        if estimate == 0.0:
            break
        v = w / estimate
    return estimate


def _gd_curve(problem, theta, lr: float, iters: int, timing: bool) -> List[CurvePoint]:
    recorder = CurveRecorder(timing)
    for t in range(iters + 1):
        loss = problem.loss(theta)
        if should_log(t, iters):
            recorder.add(t, loss)
        if not math.isfinite(loss):
            if not recorder.points or recorder.points[-1].iter != t:
                recorder.add(t, loss)
            break
        if t < iters:
            theta = theta - lr * problem.grad(theta)
    return recorder.points


def _run_trd(cfg: ScenarioConfig, bench_logger: BenchLogger) -> RunResult:
    problem, theta0, rng = _trd_setup(cfg)
    if cfg.method == 'gd':
        return _run_gd(cfg, problem, theta0, rng, bench_logger)

    run_rng = rng.spawn(5)
    options = {key: value for key, value in cfg.options().items() if key not in ('R', 'I', 'J', 'K', 'theta_lr')}
    grad_clip = options.pop('grad_clip', None)
    opt = OptimizerConfig(mode='hvp', theta_lr=cfg.extra_float('theta_lr', 0.2),
                          precond_lr=cfg.mu if cfg.mu is not None else 0.1,
                          grad_clip=float(grad_clip) if grad_clip is not None else None)
    first = fd_hvp(problem, theta0, run_rng.standard_normal(problem.dim))
    scale = init_scale(first)
    if cfg.method == 'kron':
        # factor x is R x I row-major, i.e. an I x R matrix in column-major vec
        shapes = [(cols, rows) for rows, cols in problem.layout.factor_shapes]
        precond = build_direct_sum('kron', shapes, scale=scale, mu=opt.precond_lr, beta=cfg.beta,
                                   rng=rng.spawn(6), options=options)
    else:
        precond = build_preconditioner(cfg.method, problem.dim, scale=scale, mu=opt.precond_lr,
                                       beta=cfg.beta, rng=rng.spawn(6), options=options)
    state = PsgdState.create(precond, opt)
    bench_logger.log(f"📊 dim={problem.dim} init_scale={scale:.3e} theta_lr={opt.theta_lr} grad_clip={opt.grad_clip}", "DEBUG")

    recorder = CurveRecorder(cfg.timing)
    theta = theta0
    for t in range(cfg.iters):
        try:
            theta, state, stats = psgd_step(problem, theta, state, opt, run_rng)
        except HessfitError as e:
            bench_logger.log(f"❌ optimizer failed at iteration {t}: {e}", "WARNING")
            recorder.fail(t)
            return RunResult(cfg, recorder.points, {'init_scale': scale})
        if should_log(t, cfg.iters):
            recorder.add(t, stats.loss)
    recorder.add(cfg.iters, problem.loss(theta))
    return RunResult(cfg, recorder.points, {'init_scale': scale})


def _run_gd(cfg: ScenarioConfig, problem, theta0, rng: SeededRng, bench_logger: BenchLogger) -> RunResult:
    """Plain GD over a step-size grid c / L0; the curve with the lowest final loss is reported."""
    L0 = estimate_curvature(problem, theta0, rng.spawn(7))
    if L0 == 0.0:
        L0 = 1.0
    best: Optional[List[CurvePoint]] = None
    best_lr = None
    for c in GD_GRID:
        lr = cfg.mu if cfg.mu is not None else c / L0
        curve = _gd_curve(problem, theta0, lr, cfg.iters, cfg.timing)
        final = curve[-1].metric
        bench_logger.log(f"📊 gd lr={lr:.3e}: final loss {final:.3e}", "DEBUG")
        if best is None or _better(final, best[-1].metric):
            best, best_lr = curve, lr
        if cfg.mu is not None:
            break
    return RunResult(cfg, best, {'lr': best_lr, 'L0': L0})


def _better(a: float, b: float) -> bool:
    if not math.isfinite(b):
        return True
    return math.isfinite(a) and a < b


def _run_one(cfg: ScenarioConfig) -> RunResult:
    return run_scenario_result(cfg)


def run_many(configs: Sequence[ScenarioConfig], workers: int = 1,
             on_result: Optional[Callable[[RunResult], None]] = None) -> List[RunResult]:
    """
    Run several configs, one per worker process.

    Results come back in input order; on_result is called in this process,
    so writes made from it are serialized.
    """
    results: List[RunResult] = []
    if workers <= 1 or len(configs) <= 1:
        for cfg in configs:
            result = _run_one(cfg)
            if on_result is not None:
                on_result(result)
            results.append(result)
        return results

    with ProcessPoolExecutor(max_workers=workers) as pool:
        for result in pool.map(_run_one, configs):
            if on_result is not None:
                on_result(result)
            results.append(result)
    return results
