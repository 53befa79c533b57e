"""Metric conversion of raw model outputs, scale calibration and landmark errors.

Depth maps are float arrays where NaN marks an invalid pixel; values that are
non-positive or non-finite on input are normalised to NaN by :func:`as_depth`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

FALLBACK_RADIUS_PX = 3.0


class ErrorMetric(str, enum.Enum):
    MSE = "mse"
    RMSE = "rmse"
    MAE = "mae"


@dataclass(frozen=True)
class DisparityParams:
    alpha: float = 1.0
    eps_stability: float = 1e-6
    clip_min: float = 0.0
    clip_max: float = 10.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0 < self.eps_stability < 1:
            raise ValueError(f"eps_stability must be in (0, 1), got {self.eps_stability}")
        if not self.clip_min < self.clip_max:
            raise ValueError("clip_min must be below clip_max")


@dataclass(frozen=True)
class CalibrationResult:
    lam: float
    n_train: int
    residual_rms: float


def as_depth(depth) -> np.ndarray:
    """Float64 copy of ``depth`` with every non-positive/non-finite value set to NaN."""
    d = np.array(depth, dtype=np.float64)
    d[~(np.isfinite(d) & (d > 0))] = np.nan
    return d


def disparity_to_depth(raw, params: DisparityParams = DisparityParams()) -> np.ndarray:
    """Invert a sigmoid disparity output into clipped metric depth.

    ``depth = clip(1 / (alpha * sigmoid(raw) + eps), clip_min, clip_max)``;
    non-finite raw values become NaN.
    """
    raw = np.asarray(raw, dtype=np.float64)
    finite = np.isfinite(raw)
    depth = 1.0 / (params.alpha * expit(np.where(finite, raw, 0.0)) + params.eps_stability)
    depth = np.clip(depth, params.clip_min, params.clip_max)
    return np.where(finite, depth, np.nan)


def fit_scale(pred, gt) -> CalibrationResult:
    """Closed-form least-squares scale ``sum(pred*gt) / sum(pred**2)``.

    Invalid pairs must be removed by the caller.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {gt.size} ground truths")
    if pred.size == 0:
        raise ValueError("fit_scale needs at least one landmark")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise ValueError("fit_scale inputs must be finite")
    if np.any(pred < 0):
        raise ValueError("predicted depths must be non-negative")
    denom = float(np.dot(pred, pred))
    if denom == 0.0:
        raise ValueError("degenerate calibration: all predictions are zero")
    lam = float(np.dot(pred, gt)) / denom
    resid = lam * pred - gt
    return CalibrationResult(lam=lam, n_train=int(pred.size), residual_rms=float(np.sqrt(np.mean(resid**2))))


def depth_error(pred, gt, lam: float = 1.0, metric: ErrorMetric | str = ErrorMetric.RMSE) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    if pred.size == 0:
        raise ValueError("depth_error on empty input")
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {gt.size}")
    resid = lam * pred - gt
    metric = ErrorMetric(metric)
    if metric is ErrorMetric.MAE:
        return float(np.mean(np.abs(resid)))
    mse = float(np.mean(resid**2))
    return mse if metric is ErrorMetric.MSE else math.sqrt(mse)


def average_image_errors(per_image_errors) -> float:
    """Unweighted mean over images."""
    values = [float(e) for e in per_image_errors]
    if not values:
        raise ValueError("no image errors to average")
    return math.fsum(values) / len(values)


def sample_depth_at_pixel(depth: np.ndarray, u: float, v: float,
                          radius: float = FALLBACK_RADIUS_PX) -> tuple:
    """Bilinear depth lookup at continuous ERP coordinates.

    Returns ``(value, used_fallback)``. When the 2x2 neighbourhood touches an
    invalid pixel the nearest valid pixel centre within ``radius`` pixels is
    used instead; ``value`` is NaN if there is none.
    """
    depth = np.asarray(depth)
    height, width = depth.shape[:2]
    x = u - 0.5
    y = v - 0.5
    x0 = math.floor(x)
    y0 = math.floor(y)
    fx = x - x0
    fy = y - y0
    cols = (x0 % width, (x0 + 1) % width)
    rows = (min(max(y0, 0), height - 1), min(max(y0 + 1, 0), height - 1))
    q = np.array([[depth[r, c] for c in cols] for r in rows], dtype=np.float64)
    if np.all(np.isfinite(q) & (q > 0)):
        top = q[0, 0] + fx * (q[0, 1] - q[0, 0])
        bottom = q[1, 0] + fx * (q[1, 1] - q[1, 0])
        return float(top + fy * (bottom - top)), False

    reach = int(math.ceil(radius)) + 1
    best = (math.inf, math.nan)
    for r in range(max(0, y0 - reach), min(height, y0 + reach + 2)):
        for dc in range(-reach, reach + 2):
            c = x0 + dc
            val = float(depth[r, c % width])
            if not (math.isfinite(val) and val > 0):
                continue
            dist = math.hypot(c + 0.5 - u, r + 0.5 - v)
            if dist <= radius and dist < best[0]:
                best = (dist, val)
    return best[1], math.isfinite(best[1])
