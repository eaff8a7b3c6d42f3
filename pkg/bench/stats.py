"""
Summary statistics over convergence curves.
"""

import math
from typing import Optional, Sequence, Tuple

import numpy as np

MIN_POINTS = 10


def _select(points: Sequence, span: Optional[Tuple[int, int]]):
    if span is None:
        return list(points)
    lo, hi = span
    return [p for p in points if lo <= p.iter <= hi]


def fit_loglog_slope(points: Sequence, span: Optional[Tuple[int, int]] = None) -> float:
    """Least-squares slope of log(metric) against log(iter) over iterations in span."""
    chosen = [p for p in _select(points, span) if p.iter > 0]
    if len(chosen) < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} points with iter > 0, got {len(chosen)}")
    metrics = np.array([p.metric for p in chosen], dtype=np.float64)
    if not np.all(np.isfinite(metrics)) or np.any(metrics <= 0.0):
        raise ValueError("nonpositive or non-finite metric in range")
    iters = np.array([p.iter for p in chosen], dtype=np.float64)
    slope, _ = np.polyfit(np.log(iters), np.log(metrics), 1)
    return float(slope)


def fit_loglinear(points: Sequence, span: Optional[Tuple[int, int]] = None) -> Tuple[float, float]:
    """Slope of log10(metric) against iter, and the R^2 of that line."""
    chosen = _select(points, span)
    if len(chosen) < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} points, got {len(chosen)}")
    metrics = np.array([p.metric for p in chosen], dtype=np.float64)
    if not np.all(np.isfinite(metrics)) or np.any(metrics <= 0.0):
        raise ValueError("nonpositive or non-finite metric in range")
    x = np.array([p.iter for p in chosen], dtype=np.float64)
    y = np.log10(metrics)
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    total = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(residual ** 2)) / total if total > 0.0 else 1.0
    return float(slope), r2


def first_hit(points: Sequence, target: float) -> Optional[int]:
    """First logged iteration whose metric is <= target, or None."""
    for p in points:
        if math.isfinite(p.metric) and p.metric <= target:
            return p.iter
    return None


def min_metric(points: Sequence) -> float:
    finite = [p.metric for p in points if math.isfinite(p.metric)]
    return min(finite) if finite else math.inf


def step_ratios(values: Sequence[float]) -> np.ndarray:
    """Consecutive ratios values[t+1] / values[t] over nonzero entries."""
    arr = np.asarray(values, dtype=np.float64)
    return arr[1:][arr[:-1] != 0.0] / arr[:-1][arr[:-1] != 0.0]
