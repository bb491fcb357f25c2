"""Point estimators built on a weight vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .interp_cdf import interp_quantile

WEIGHT_SOURCES = ("design", "calibrated", "el", "ipw", "uniform")


@dataclass(frozen=True)
class EstimateRequest:
    """What to estimate: ``parameter`` is ``"total"``, ``"mean"`` or ``"quantile"``."""

    parameter: str
    variable: str
    alpha: float | None = None
    weights_source: str = "calibrated"

    def __post_init__(self):
        if self.parameter not in ("total", "mean", "quantile"):
            raise ValueError(f"unknown parameter {self.parameter!r}")
        if self.parameter == "quantile":
            if self.alpha is None or not 0 < self.alpha < 1:
                raise ValueError(f"quantile order must lie in (0,1), got {self.alpha}")
        if self.weights_source not in WEIGHT_SOURCES:
            raise ValueError(f"unknown weights source {self.weights_source!r}")

    @classmethod
    def parse(cls, text: str, weights_source: str = "calibrated") -> "EstimateRequest":
        """Parse ``mean:y``, ``total:y`` or ``quantile:y:0.5``."""
        parts = text.split(":")
        if parts[0] == "quantile" and len(parts) == 3:
            return cls("quantile", parts[1], float(parts[2]), weights_source)
        if parts[0] in ("mean", "total") and len(parts) == 2:
            return cls(parts[0], parts[1], None, weights_source)
        raise ValueError(f"cannot parse request {text!r}; use mean:VAR, total:VAR or quantile:VAR:ALPHA")

    @property
    def label(self) -> str:
        if self.parameter == "quantile":
            return f"quantile({self.variable}, {self.alpha:g})"
        return f"{self.parameter}({self.variable})"


def _pair(w, y):
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    if w.shape != y.shape:
        raise ValueError(f"weights and values differ in length ({w.size} vs {y.size})")
    return w, y


def est_total(w, y) -> float:
    w, y = _pair(w, y)
    return float(w @ y)


def est_mean(w, y, N: float | None = None) -> float:
    """Weighted total over ``N``; ``N=None`` gives the Hajek mean (divide by ``sum w``)."""
    w, y = _pair(w, y)
    if N is None:
        N = w.sum()
    if not N > 0:
        raise ValueError(f"N must be positive, got {N}")
    return float(w @ y) / N


def est_quantile(w, y, alpha: float, N: float | None = None) -> float:
    """Quantile from the interpolated CDF of ``y`` under weights ``w``.

    Weights that do not add up to ``N`` (IPW, for instance) are normalised
    by their own sum.
    """
    w, y = _pair(w, y)
    total = float(w.sum())
    if N is None or abs(total - N) > 1e-6 * abs(N):
        N = total
    return interp_quantile(y, w, alpha, N)


def naive_estimates(y, parameter):
    """Equal-weight estimate; ``parameter`` is ``"mean"`` or a quantile order."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty sample")
    if parameter == "mean":
        return float(y.mean())
    return interp_quantile(y, np.ones(y.size), float(parameter), float(y.size))


def estimate(request: EstimateRequest, w, y, N: float | None = None) -> float:
    if request.parameter == "total":
        return est_total(w, y)
    if request.parameter == "mean":
        return est_mean(w, y, N)
    return est_quantile(w, y, request.alpha, N)
