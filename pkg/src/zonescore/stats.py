"""Small descriptive-statistics helpers shared by the similarity, morpho and econ modules.

Percentiles everywhere use linear interpolation between order statistics
(inclusive definition), i.e. position ``q * (n - 1)`` in the sorted sample.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np


def percentile(values: Iterable[float], q: float) -> float:
    """Return the ``q``-quantile (``0 <= q <= 1``) by linear interpolation."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile must lie in [0, 1], got {q}")
    arr = np.sort(np.asarray(list(values), dtype=float))
    if arr.size == 0:
        raise ValueError("percentile of an empty sample")
    pos = q * (arr.size - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, arr.size - 1)
    frac = pos - lo
    return float(arr[lo] + (arr[hi] - arr[lo]) * frac)


def median(values: Iterable[float]) -> float:
    return percentile(values, 0.5)


def sample_std(values: Sequence[float]) -> float:
    """Sample standard deviation with the n - 1 convention; 0.0 when n < 2."""
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return 0.0
    return float(np.std(arr, ddof=1))


def weighted_mean(values: Sequence[float], weights: Sequence[float]) -> float:
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise ValueError("weights sum to zero")
    return float((v * w).sum() / total)


def winsorize_upper(values: Sequence[float], q: float = 0.99) -> np.ndarray:
    """Cap values above the ``q`` percentile at that percentile."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return arr.copy()
    cap = percentile(arr, q)
    return np.minimum(arr, cap)


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.size != ya.size:
        raise ValueError("pearson_r needs equal-length samples")
    if xa.size < 3:
        raise ValueError("correlation needs at least 3 observations")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined: zero variance")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
