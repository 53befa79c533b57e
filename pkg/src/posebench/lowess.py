"""Robust locally weighted linear regression (LOWESS).

Each fit uses the ``ceil(frac * n)`` nearest x-neighbours of the evaluation
point, weighted by the tricube of ``distance / h`` where ``h`` is the distance
to the farthest of those neighbours. Robustifying passes multiply in bisquare
weights of ``residual / (6 * median|residual|)`` computed at the data points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LowessConfig:
    frac: float = 0.3
    iterations: int = 2
    degree: int = 1

    def __post_init__(self):
        if not 0.0 < self.frac <= 1.0:
            raise ValueError(f"frac must be in (0, 1], got {self.frac}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.degree != 1:
            raise ValueError("only local linear fits (degree 1) are supported")


def _local_fit(x0: float, x: np.ndarray, y: np.ndarray, robust: np.ndarray, r: int) -> float:
    dist = np.abs(x - x0)
    h = np.partition(dist, r - 1)[r - 1]
    if h > 0:
        w = np.clip(1.0 - (dist / h) ** 3, 0.0, None) ** 3
    else:
        w = (dist == 0).astype(np.float64)
    base = w
    w = w * robust
    if not np.any(w > 0):
        w = base
    sw = w.sum()
    used = x[w > 0]
    ym = float(np.dot(w, y) / sw)
    if used.max() == used.min():
        return ym
    xm = float(np.dot(w, x) / sw)
    dx = x - xm
    slope = float(np.dot(w, dx * (y - ym)) / np.dot(w, dx * dx))
    return ym + slope * (x0 - xm)


def lowess(x, y, config: LowessConfig = LowessConfig(), eval_points=None) -> np.ndarray:
    """Fitted LOWESS values at ``eval_points`` (defaults to ``x``)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    n = x.size
    if n < 3:
        raise ValueError("lowess needs at least 3 points")
    r = math.ceil(config.frac * n - 1e-9)
    if r < 2:
        raise ValueError(f"frac * n must be at least 2 (got {config.frac} * {n})")
    eval_points = x if eval_points is None else np.asarray(eval_points, dtype=np.float64).ravel()

    robust = np.ones(n)
    for _ in range(config.iterations):
        fitted = np.array([_local_fit(xi, x, y, robust, r) for xi in x])
        resid = y - fitted
        s = float(np.median(np.abs(resid)))
        if s <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
            break
        u = np.clip(resid / (6.0 * s), -1.0, 1.0)
        robust = (1.0 - u * u) ** 2
    return np.array([_local_fit(xe, x, y, robust, r) for xe in eval_points])
