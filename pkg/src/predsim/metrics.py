"""Error measures for displayed-vs-live point clouds.

Two measures are used. `frame_error` is the index-matched mean distance:
point i of the displayed cloud is compared with point i of the live cloud.
`min_dist_error` drops the index correspondence and charges each predicted
point its distance to the nearest live point; it is directed (not
symmetric) and is the right measure when point identity is unreliable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class ErrorSeries:
    t_ms: np.ndarray
    error_mm: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_ms, dtype=float)
        e = np.asarray(self.error_mm, dtype=float)
        if t.shape != e.shape or t.ndim != 1:
            raise ValueError("t_ms and error_mm must be 1-d and the same length")
        if np.any(np.diff(t) < 0):
            raise ValueError("t_ms must be nondecreasing")
        if np.any(e < 0):
            raise ValueError("errors must be >= 0")
        object.__setattr__(self, "t_ms", t)
        object.__setattr__(self, "error_mm", e)

    def __len__(self) -> int:
        return len(self.t_ms)


@dataclass(frozen=True)
class SummaryStats:
    mean_mm: float
    std_mm: float  # population standard deviation
    n: int


class MinDistResult(NamedTuple):
    sum_mm: float
    mean_mm: float


@dataclass(frozen=True)
class ReductionFactors:
    mean_ratio: float
    std_ratio: float
    degenerate: bool = False  # a denominator was zero; ratios reported as inf


def frame_error(displayed: np.ndarray, live: np.ndarray) -> float:
    """Mean Euclidean distance between index-matched points, in mm.

    The per-point distances are accumulated strictly left to right so the
    value is bit-reproducible by any IEEE-754 implementation of the same
    formula (the browser readout asserts exact agreement on shared
    fixtures).
    """
    d = np.asarray(displayed, dtype=float)
    l = np.asarray(live, dtype=float)
    if d.shape != l.shape or d.ndim != 2 or d.shape[1] != 3:
        raise ValueError(f"point clouds must share an (N, 3) shape, got {d.shape} vs {l.shape}")
    diff = d - l
    dists = np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2])
    total = 0.0
    for value in dists.tolist():
        total += value
    return total / len(dists)


def min_dist_error(predicted: np.ndarray, live: np.ndarray) -> MinDistResult:
    """Directed sum over predicted points of the distance to the nearest live point."""
    p = np.asarray(predicted, dtype=float)
    l = np.asarray(live, dtype=float)
    if p.ndim != 2 or l.ndim != 2 or p.shape[1] != 3 or l.shape[1] != 3:
        raise ValueError("point clouds must be (N, 3)")
    if len(p) == 0 or len(l) == 0:
        raise ValueError("point clouds must be nonempty")
    d2 = np.sum((p[:, None, :] - l[None, :, :]) ** 2, axis=2)
    nearest = np.sqrt(d2.min(axis=1))
    total = float(nearest.sum())
    return MinDistResult(sum_mm=total, mean_mm=total / len(p))


def moving_average(values: np.ndarray, window: int = 50) -> np.ndarray:
    """Trailing moving average; the first window-1 entries average the available prefix."""
    v = np.asarray(values, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(v)])
    n = len(v)
    idx = np.arange(1, n + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def aggregate(series: ErrorSeries, window: int = 50) -> tuple[SummaryStats, np.ndarray]:
    """Summary stats (population std) plus the trailing moving average."""
    if len(series) < 1:
        raise ValueError("series must have at least one sample")
    e = series.error_mm
    stats = SummaryStats(mean_mm=float(e.mean()), std_mm=float(e.std()), n=len(e))
    return stats, moving_average(e, window)


def reduction_factor(base: SummaryStats, pred: SummaryStats) -> ReductionFactors:
    """How much smaller the predicted error is than the baseline: (mean ratio, std ratio)."""
    degenerate = pred.mean_mm == 0 or pred.std_mm == 0
    mean_ratio = base.mean_mm / pred.mean_mm if pred.mean_mm > 0 else math.inf
    std_ratio = base.std_mm / pred.std_mm if pred.std_mm > 0 else math.inf
    return ReductionFactors(mean_ratio=mean_ratio, std_ratio=std_ratio, degenerate=degenerate)
