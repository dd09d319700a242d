"""Small weighted-statistics helpers shared by several modules."""
from __future__ import annotations

import numpy as np


def normalize_weights(weights):
    """Rescale positive weights to mean one."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        return w
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be finite and positive")
    return w / w.mean()


def weighted_median(values, weights):
    """Weighted median with a midpoint rule.

    Values are sorted and weights accumulated.  If the cumulative weight hits
    exactly half the total at some value, the result is the midpoint of that
    value and the next one; otherwise it is the first value whose
    cumulative weight exceeds half.
    """
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.size == 0:
        raise ValueError("weighted_median of an empty sample")
    if x.shape != w.shape:
        raise ValueError("values and weights differ in shape")
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    cum = np.cumsum(w)
    half = cum[-1] / 2.0
    i = int(np.searchsorted(cum, half, side="left"))
    if np.isclose(cum[i], half, rtol=1e-12, atol=0.0) and i + 1 < x.size:
        return float((x[i] + x[i + 1]) / 2.0)
    return float(x[i])


def weighted_mean_sd(values, weights=None):
    """Weighted mean and standard deviation.

    Weights are normalised to mean one and the variance uses ``sum(w) - 1``
    in the denominator, so equal weights reproduce the ordinary sample SD.
    """
    x = np.asarray(values, dtype=float)
    w = np.ones_like(x) if weights is None else normalize_weights(weights)
    mean = float(np.sum(w * x) / np.sum(w))
    if x.size < 2:
        return mean, 0.0
    var = float(np.sum(w * (x - mean) ** 2) / (np.sum(w) - 1.0))
    return mean, float(np.sqrt(max(var, 0.0)))


def weighted_share(mask, weights):
    """Weighted percentage of rows where ``mask`` is true."""
    m = np.asarray(mask, dtype=bool)
    w = np.asarray(weights, dtype=float)
    return float(100.0 * w[m].sum() / w.sum())
