"""
Benchmark scenario registry, scenario configuration and Hessian generators.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np

from fitters.registry import METHODS, validate_method
from helpers.rng import SeededRng
from numerics.errors import ScenarioError
from numerics.matkit import Matrix, hilbert, sym_abs, sym_power

HESSIAN_KINDS = ('hilbert3', 'tridiag50', 'hilb64reg', 'timevarying')
FIT_METRICS = ('err', 'dist')
DRAW_MODES = ('gaussian', 'orthogonal')

# comparators that are not preconditioner fitters
BENCH_ONLY_METHODS = ('gd',)


@dataclass(frozen=True)
class MethodDefaults:
    mu: Optional[float] = None
    beta: Optional[float] = None
    iters: Optional[int] = None
    options: Tuple[Tuple[str, Any], ...] = ()


@dataclass(frozen=True)
class ScenarioSpec:
    """Registered benchmark protocol."""
    name: str
    kind: str          # fit | whiten | trd
    hessian: Optional[str]
    n: int
    iters: int
    sigma_eps: float
    metric: str        # err | kappa | loss
    methods: Dict[str, MethodDefaults]
    description: str


SCENARIOS: Dict[str, ScenarioSpec] = {spec.name: spec for spec in (
    ScenarioSpec(
        'fig1', 'fit', 'hilbert3', 3, 20000, 0.0, 'err',
        {
            'euclid': MethodDefaults(mu=0.05),
            'closed': MethodDefaults(options=(('ema_clip', 1.0 - 1e-7), ('p0', 100.0), ('draws', 'orthogonal'))),
            'riccati': MethodDefaults(iters=2000),
            'spd': MethodDefaults(mu=0.05),
            'gl': MethodDefaults(mu=1.0, beta=0.0),
            'tri': MethodDefaults(mu=1.0, beta=0.0),
            'newton': MethodDefaults(iters=60),
        },
        '3x3 Hilbert matrix, exact pairs, P0 = I (Newton: P0 = 0.02 I; closed: P0 = 100 I, orthogonal draws)'),
    ScenarioSpec(
        'fig2a', 'fit', 'tridiag50', 50, 300000, 0.0, 'err',
        {
            'gl': MethodDefaults(mu=1.0, beta=0.0),
            'tri': MethodDefaults(mu=1.0, beta=0.0),
            'closed': MethodDefaults(),
            'bfgs': MethodDefaults(),
        },
        '50x50 tridiagonal H, clean pairs'),
    ScenarioSpec(
        'fig2b', 'fit', 'tridiag50', 50, 50000, 0.01, 'err',
        {
            'gl': MethodDefaults(mu=0.1, beta=0.0),
            'tri': MethodDefaults(mu=0.1, beta=0.0),
            'closed': MethodDefaults(),
            'bfgs': MethodDefaults(),
        },
        '50x50 tridiagonal H, pairs with N(0, 0.01^2) model noise'),
    ScenarioSpec(
        'fig2c', 'fit', 'timevarying', 50, 10000, 0.0, 'err',
        {
            'gl': MethodDefaults(mu=1.0, beta=0.0),
            'tri': MethodDefaults(mu=1.0, beta=0.0),
            'closed': MethodDefaults(),
            'bfgs': MethodDefaults(),
        },
        'time-varying H_{t+1} = H_t + u u^T from H_0 = 1/4'),
    ScenarioSpec(
        'fig3', 'whiten', 'hilb64reg', 64, 100000, 0.0, 'kappa',
        {
            'gl': MethodDefaults(mu=1.0, beta=1.0),
            'qeq': MethodDefaults(mu=0.1, beta=1.0),
            'quad1': MethodDefaults(mu=0.1, beta=1.0),
            'quad2': MethodDefaults(mu=0.1, beta=1.0),
            'qep': MethodDefaults(mu=1.0, beta=1.0, options=(('integrate_out_v', True),)),
        },
        'gradient whitening, covariance hilb(64) + 1e-6 I, Q0 = I (qep integrates out v)'),
    ScenarioSpec(
        'fig4', 'trd', None, 0, 3000, 0.0, 'loss',
        {
            'gd': MethodDefaults(),
            'lra': MethodDefaults(mu=0.1, beta=0.0, options=(('rank', 10), ('grad_clip', 1.0))),
            'kron': MethodDefaults(mu=0.1, beta=0.0),
            'diag': MethodDefaults(mu=0.1, beta=0.0),
            'quad1': MethodDefaults(mu=0.1, beta=1.0),
        },
        'rank-10 planted CP decomposition 20x50x100 from a near-saddle start'),
    ScenarioSpec(
        'custom', 'fit', 'tridiag50', 50, 5000, 0.0, 'err',
        {name: MethodDefaults() for name in METHODS if name != 'newton'},
        'any pair-driven fitter on a chosen Hessian (extra: hessian=<kind>)'),
)}

TRD_DEFAULTS = {'R': 10, 'I': 20, 'J': 50, 'K': 100}


@dataclass(frozen=True)
class ScenarioConfig:
    """One benchmark run."""
    scenario: str
    method: str
    n: Optional[int] = None
    iters: Optional[int] = None
    seed: int = 0
    mu: Optional[float] = None
    beta: Optional[float] = None
    sigma_eps: Optional[float] = None
    extra: Dict[str, str] = field(default_factory=dict)
    timing: bool = False

    @property
    def spec(self) -> ScenarioSpec:
        return SCENARIOS[self.scenario]

    def validate(self) -> 'ScenarioConfig':
        """Check names and ranges; return the config with scenario defaults filled in."""
        if self.scenario not in SCENARIOS:
            raise ScenarioError(f"Unsupported scenario '{self.scenario}'. "
                                f"Supported scenarios: {', '.join(SCENARIOS)}")
        spec = self.spec
        if self.method not in spec.methods:
            raise ScenarioError(f"Method '{self.method}' is not registered for {self.scenario}. "
                                f"Registered: {', '.join(spec.methods)}")
        if self.method not in BENCH_ONLY_METHODS:
            validate_method(self.method)
        defaults = spec.methods[self.method]
        iters = self.iters if self.iters is not None else (defaults.iters or spec.iters)
        if iters < 1:
            raise ScenarioError(f"iters must be >= 1, got {iters}")
        if not 0 <= self.seed < 2 ** 64:
            raise ScenarioError(f"seed must fit in 64 bits, got {self.seed}")
        hessian = self.extra.get('hessian', spec.hessian)
        if spec.kind != 'trd' and hessian not in HESSIAN_KINDS:
            raise ScenarioError(f"Unknown hessian kind '{hessian}'. Supported: {', '.join(HESSIAN_KINDS)}")
        n = self.n if self.n is not None else _natural_dim(hessian, spec.n)
        sigma = self.sigma_eps if self.sigma_eps is not None else spec.sigma_eps
        if sigma < 0:
            raise ScenarioError(f"sigma_eps must be nonnegative, got {sigma}")
        mu = self.mu if self.mu is not None else defaults.mu
        if mu is not None and mu <= 0:
            raise ScenarioError(f"mu must be positive, got {mu}")
        beta = self.beta if self.beta is not None else defaults.beta
        if beta is not None and not 0.0 <= beta <= 1.0:
            raise ScenarioError(f"beta must be in [0, 1], got {beta}")
        self._validate_fit_options()
        return replace(self, n=n, iters=iters, sigma_eps=sigma, mu=mu, beta=beta)

    def _validate_fit_options(self) -> None:
        if self.spec.kind != 'fit':
            given = [key for key in ('metric', 'draws', 'p0') if key in self.extra]
            if given:
                raise ScenarioError(f"extra {', '.join(given)} only applies to fitting scenarios")
            return
        options = self.options()
        if options.get('metric', 'err') not in FIT_METRICS:
            raise ScenarioError(f"metric must be one of {', '.join(FIT_METRICS)}, got '{options['metric']}'")
        if options.get('draws', 'gaussian') not in DRAW_MODES:
            raise ScenarioError(f"draws must be one of {', '.join(DRAW_MODES)}, got '{options['draws']}'")
        p0 = options.get('p0', 1.0)
        if isinstance(p0, bool) or not isinstance(p0, (int, float)) or not p0 > 0:
            raise ScenarioError(f"p0 must be a positive number, got '{p0}'")

    def options(self) -> Dict[str, Any]:
        """Method options: registry defaults overridden by numeric-looking extra values."""
        out: Dict[str, Any] = dict(self.spec.methods[self.method].options)
        for key, raw in self.extra.items():
            out[key] = _parse_scalar(raw)
        return out

    def extra_float(self, key: str, default: float) -> float:
        raw = self.extra.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ScenarioError(f"extra '{key}' must be a number, got '{raw}'")

    def extra_int(self, key: str, default: int) -> int:
        raw = self.extra.get(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ScenarioError(f"extra '{key}' must be an integer, got '{raw}'")


def _parse_scalar(raw: str):
    for cast in (int, float):
        try:
            return cast(raw)
        except (TypeError, ValueError):
            pass
    if raw.lower() in ('true', 'false'):
        return raw.lower() == 'true'
    return raw


def _natural_dim(hessian: Optional[str], fallback: int) -> int:
    return {'hilbert3': 3, 'tridiag50': 50, 'hilb64reg': 64}.get(hessian, fallback)


def tridiagonal(n: int) -> Matrix:
    """Ones on the diagonal, 0.5 on the first off-diagonals."""
    return np.eye(n) + 0.5 * (np.eye(n, k=1) + np.eye(n, k=-1))


class TimeVaryingHessian:
    """H_0 with all entries 1/4; each advance adds u u^T with u_i ~ U(0, 1)."""

    def __init__(self, n: int, rng: SeededRng):
        self.rng = rng
        self.current = np.full((n, n), 0.25)
        self.t = 0

    def advance(self) -> Matrix:
        u = self.rng.uniform(self.current.shape[0])
        self.current = self.current + np.outer(u, u)
        self.t += 1
        return self.current


def make_hessian(kind: str, rng: Optional[SeededRng] = None, n: Optional[int] = None):
    """Scenario Hessian; 'timevarying' returns a TimeVaryingHessian stream."""
    if kind == 'hilbert3':
        return hilbert(n or 3)
    if kind == 'tridiag50':
        return tridiagonal(n or 50)
    if kind == 'hilb64reg':
        size = n or 64
        return hilbert(size) + 1e-6 * np.eye(size)
    if kind == 'timevarying':
        return TimeVaryingHessian(n or 50, rng if rng is not None else SeededRng(0))
    raise ScenarioError(f"Unknown hessian kind '{kind}'. Supported: {', '.join(HESSIAN_KINDS)}")


def ground_truth(H: Matrix, sigma_eps: float) -> Matrix:
    """H' = (H^2 + sigma^2 I)^{1/2}."""
    if sigma_eps == 0.0:
        return sym_abs(H)
    return sym_power(H @ H + sigma_eps ** 2 * np.eye(H.shape[0]), 0.5)


def fitting_error(P: Matrix, H_prime: Matrix) -> float:
    """||P H' - I||_F / sqrt(n)."""
    n = P.shape[0]
    return float(np.linalg.norm(P @ H_prime - np.eye(n)) / math.sqrt(n))


def fitting_distance(P: Matrix, H_prime: Matrix) -> float:
    """||P - H'^{-1}||_F."""
    return float(np.linalg.norm(P - sym_power(H_prime, -1.0)))


def whitening_condition(P: Matrix, H: Matrix) -> float:
    """kappa(P H P)."""
    w = np.linalg.eigvalsh(P @ H @ P)
    if w[0] <= 0.0:
        return math.inf
    return float(w[-1] / w[0])


def list_registered():
    """(scenario, method, spec, defaults) for every registered pair."""
    for spec in SCENARIOS.values():
        for method, defaults in spec.methods.items():
            yield spec.name, method, spec, defaults
