"""Interpolated distribution functions and quantile inversion.

The interpolated CDF replaces the step function by a function that is
linear between consecutive sample values. For a point ``t`` the sample is
bracketed by ``L`` (largest value <= t) and ``U`` (smallest value > t);
units at or below ``L`` count fully and units equal to ``U`` count with the
fraction ``beta = (t - L) / (U - L)``.

Population versions (exact right-continuous step CDF and the
``inf{t : F(t) >= alpha}`` quantile) are provided as oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class Bracket:
    L: float
    U: float
    beta: float


def bracket(values, t: float) -> Bracket:
    """Bracket ``t`` by the sample values around it.

    ``beta`` is 0 when nothing lies at or below ``t`` and 1 when nothing lies
    above it, so the interpolated CDF is 0 below the sample and 1 at or
    above its maximum.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty sample")
    below = v[v <= t]
    above = v[v > t]
    L = float(below.max()) if below.size else -math.inf
    U = float(above.min()) if above.size else math.inf
    if math.isinf(U):
        beta = 1.0
    elif math.isinf(L):
        beta = 0.0
    else:
        beta = (t - L) / (U - L)
    return Bracket(L, U, beta)


def h_interp(t: float, y_k: float, b: Bracket) -> float:
    """Interpolated step for one unit given the bracket of ``t``."""
    if y_k <= b.L:
        return 1.0
    if y_k == b.U:
        return b.beta
    return 0.0


def h_interp_vector(values, t: float) -> np.ndarray:
    """:func:`h_interp` for every unit of the sample, bracket computed once."""
    v = np.asarray(values, dtype=float)
    b = bracket(v, t)
    out = np.zeros(v.shape)
    out[v <= b.L] = 1.0
    out[v == b.U] = b.beta
    return out


def interp_cdf(values, weights, t: float) -> float:
    """Weighted interpolated distribution function at ``t``."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.shape != w.shape:
        raise ValueError(f"values and weights differ in length ({v.size} vs {w.size})")
    total = w.sum()
    if not total > 0:
        raise ValueError("total weight must be positive")
    return float(min(1.0, max(0.0, w @ h_interp_vector(v, t) / total)))


def _collapse_ties(values, weights):
    order = np.argsort(values, kind="stable")
    sv = values[order]
    sw = weights[order]
    uniq, start = np.unique(sv, return_index=True)
    return uniq, np.add.reduceat(sw, start)


def interp_quantile(values, weights, alpha: float, N: float) -> float:
    """Invert the interpolated CDF at ``alpha``.

    On the sorted distinct values ``v_1 < ... < v_m`` with pooled weights,
    finds the first ``p`` with ``cum_p <= N*alpha < cum_{p+1}`` and returns
    ``v_p + (N*alpha - cum_p) / w_{p+1} * (v_{p+1} - v_p)``. Outside the
    invertible range the result is clamped to the sample minimum or maximum.

    Args:
        values: sample values.
        weights: weights summing to ``N`` (within ``1e-6 * N``).
        alpha: quantile order.
        N: population size the weights are calibrated to.
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.shape != w.shape:
        raise ValueError(f"values and weights differ in length ({v.size} vs {w.size})")
    if not N > 0:
        raise ValueError(f"N must be positive, got {N}")
    if v.size == 0:
        raise ValueError("empty sample")
    if abs(w.sum() - N) > 1e-6 * N:
        raise ValueError(f"weights sum to {w.sum()!r}, not N={N!r}")
    uniq, pooled = _collapse_ties(v, w)
    if uniq.size == 1:
        return float(uniq[0])
    cum = np.cumsum(pooled)
    target = N * alpha
    hit = (cum[:-1] <= target) & (target < cum[1:])
    if hit.any():
        p = int(np.argmax(hit))
        return float(uniq[p] + (target - cum[p]) / pooled[p + 1] * (uniq[p + 1] - uniq[p]))
    if target < cum[0]:
        return float(uniq[0])
    return float(uniq[-1])


def smooth_heaviside(x, k: float):
    """Logistic approximation ``1 / (1 + exp(-2kx))`` of the unit step."""
    if not k > 0:
        raise ValueError("k must be positive")
    out = expit(2.0 * k * np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def population_cdf(values, t: float) -> float:
    """Exact step CDF: share of values ``<= t``."""
    v = np.asarray(values, dtype=float)
    return float(np.count_nonzero(v <= t) / v.size)


def population_quantile(values, alpha: float) -> float:
    """Smallest sample value ``v`` with ``population_cdf(values, v) >= alpha``."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty sample")
    # share of values <= v[i] is at least (i+1)/n; ties only push it higher,
    # and the first index in a tie run reaching alpha has the same value.
    shares = np.arange(1, v.size + 1) / v.size
    i = int(np.searchsorted(shares, alpha, side="left"))
    return float(v[min(i, v.size - 1)])
