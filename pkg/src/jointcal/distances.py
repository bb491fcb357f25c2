"""Calibration distance functions.

Each distance ``G`` is convex with ``G(1) = G'(1) = 0`` and ``G''(1) = 1``.
The solvers work in the dual, where the weight ratio is ``F(u)`` with
``F = (G')^{-1}`` and the dual objective uses the convex conjugate
``G*(u) = u F(u) - G(F(u))`` whose derivative is ``F``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

QUADRATIC = "quadratic"
RAKING = "raking"
LOGIT = "logit"
KINDS = (QUADRATIC, RAKING, LOGIT)


class Quadratic:
    """``G(x) = (x - 1)^2 / 2``; weights may go negative."""

    def G(self, x):
        return 0.5 * (np.asarray(x, dtype=float) - 1.0) ** 2

    def dG(self, x):
        return np.asarray(x, dtype=float) - 1.0

    def F(self, u):
        return 1.0 + np.asarray(u, dtype=float)

    def dF(self, u):
        return np.ones_like(np.asarray(u, dtype=float))

    def conj(self, u):
        u = np.asarray(u, dtype=float)
        return u + 0.5 * u * u


class Raking:
    """``G(x) = x log x - x + 1``; ratios ``exp(u)`` stay positive."""

    def G(self, x):
        x = np.asarray(x, dtype=float)
        return xlogy(x, x) - x + 1.0

    def dG(self, x):
        return np.log(np.asarray(x, dtype=float))

    def F(self, u):
        with np.errstate(over="ignore"):
            return np.exp(np.asarray(u, dtype=float))

    dF = F

    def conj(self, u):
        with np.errstate(over="ignore"):
            return np.expm1(np.asarray(u, dtype=float))


class Logit:
    """Bounded logit distance with ratios confined to ``(L, U)``."""

    def __init__(self, L: float, U: float):
        if not (0 <= L < 1 < U < math.inf):
            raise ValueError(f"logit distance needs 0 <= L < 1 < U < inf, got L={L}, U={U}")
        self.L = float(L)
        self.U = float(U)
        self.gamma = (U - L) / ((1 - L) * (U - 1))
        self._shift = math.log((1 - L) / (U - 1))

    def G(self, x):
        x = np.asarray(x, dtype=float)
        L, U = self.L, self.U
        inside = (x >= L) & (x <= U)
        xc = np.clip(x, L, U)
        val = (xlogy(xc - L, (xc - L) / (1 - L)) + xlogy(U - xc, (U - xc) / (U - 1))) / self.gamma
        return np.where(inside, val, np.inf)

    def dG(self, x):
        x = np.asarray(x, dtype=float)
        L, U = self.L, self.U
        return (np.log((x - L) / (1 - L)) - np.log((U - x) / (U - 1))) / self.gamma

    def _s(self, u):
        return expit(self.gamma * np.asarray(u, dtype=float) + self._shift)

    def F(self, u):
        # [L(U-1) + U(1-L)e^{gu}] / [(U-1) + (1-L)e^{gu}] written through expit
        return self.L + (self.U - self.L) * self._s(u)

    def dF(self, u):
        s = self._s(u)
        return (self.U - self.L) * self.gamma * s * (1.0 - s)

    def conj(self, u):
        u = np.asarray(u, dtype=float)
        x = self.F(u)
        return u * x - self.G(x)


@dataclass(frozen=True)
class DistanceSpec:
    """Which distance to minimise.

    Attributes:
        kind: ``"quadratic"``, ``"raking"`` or ``"logit"``.
        bounds: ``(L, U)`` ratio bounds, required for (and only used by) logit.
        q: optional per-unit positive scale factors; the distance becomes
            ``sum d_k / q_k G(w_k / d_k)``.
    """

    kind: str = RAKING
    bounds: tuple | None = None
    q: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distance {self.kind!r}; expected one of {KINDS}")
        if self.kind == LOGIT:
            if self.bounds is None:
                raise ValueError("logit distance requires bounds (L, U)")
            Logit(*self.bounds)
        elif self.bounds is not None:
            raise ValueError(f"bounds are only supported by the logit distance, not {self.kind!r}")
        if self.q is not None:
            q = tuple(float(v) for v in self.q)
            if any(not (v > 0 and math.isfinite(v)) for v in q):
                raise ValueError("q factors must be positive and finite")
            object.__setattr__(self, "q", q)

    def functions(self):
        if self.kind == QUADRATIC:
            return Quadratic()
        if self.kind == RAKING:
            return Raking()
        return Logit(*self.bounds)

    def q_vector(self, n: int) -> np.ndarray:
        if self.q is None:
            return np.ones(n)
        if len(self.q) != n:
            raise ValueError(f"q has {len(self.q)} entries, expected {n}")
        return np.asarray(self.q)


def distance_value(spec: DistanceSpec, d, w) -> float:
    """``sum_k d_k / q_k G(w_k / d_k)``."""
    d = np.asarray(d, dtype=float)
    w = np.asarray(w, dtype=float)
    q = spec.q_vector(d.size)
    return float(np.sum(d / q * spec.functions().G(w / d)))
