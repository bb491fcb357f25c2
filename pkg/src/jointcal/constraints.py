"""Assembly of the joint calibration system for totals and quantiles.

Every calibration equation is written as ``sum_k w_k A[k, j] = h[j]``. Total
equations use the auxiliary variable itself, the size equation a column of
ones, and a quantile equation ``F_cal(Q) = alpha`` the pseudo-variable
``a_k`` (``1/N``, ``beta/N`` or ``0``) evaluated at the known quantile.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import SampleFrame, TargetSpec, validate_frame
from .interp_cdf import h_interp_vector

TOTAL = "total"
SIZE = "size"
QUANTILE = "quantile"


@dataclass(frozen=True)
class Column:
    kind: str
    variable: str | None = None
    alpha: float | None = None
    quantile: float | None = None

    @property
    def label(self) -> str:
        if self.kind == SIZE:
            return "size"
        if self.kind == TOTAL:
            return f"total({self.variable})"
        return f"quantile({self.variable}, {self.alpha:g})"


@dataclass(frozen=True)
class ConstraintSystem:
    """Constraint matrix ``A`` (n x m), targets ``h`` and column metadata.

    ``scale`` is the cumulative conditioning factor applied by
    :func:`rescale_system`; ``N`` is the population size behind the system.
    """

    A: np.ndarray
    h: np.ndarray
    columns: tuple
    N: float
    scale: float = 1.0

    def __post_init__(self):
        A = np.array(self.A, dtype=float, copy=True)
        if A.ndim == 1:
            A = A.reshape(-1, 1)
        h = np.array(self.h, dtype=float, copy=True).reshape(-1)
        if A.shape[1] != h.size or h.size != len(self.columns):
            raise ValueError(
                f"inconsistent system: A {A.shape}, h {h.shape}, {len(self.columns)} columns")
        A.flags.writeable = False
        h.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def labels(self) -> list:
        return [c.label for c in self.columns]


def quantile_pseudo_variable(x_col, Q: float, alpha: float, N: float) -> np.ndarray:
    """Per-unit pseudo-variable turning ``F_cal(Q) = alpha`` into a linear equation.

    The bracket of ``Q`` is taken over the sample column itself, so units at
    or below ``L`` get ``1/N``, units equal to ``U`` get ``beta/N`` and the
    rest 0. ``alpha`` only enters through the matching target.
    """
    if not N > 0:
        raise ValueError(f"N must be positive, got {N}")
    return h_interp_vector(x_col, Q) / N


def build_system(frame: SampleFrame, targets: TargetSpec) -> ConstraintSystem:
    """Stack totals, the size equation and quantile pseudo-variables.

    Column order is ``[totals..., size, quantiles...]``.

    Raises:
        ValueError: if ``validate_frame`` reports any issue (missing column,
            duplicate ``(variable, alpha)``, ...).
    """
    report = validate_frame(frame, targets)
    if not report.ok:
        raise ValueError(report.summary())
    cols, rows, h = [], [], []
    for name, tau in targets.totals.items():
        cols.append(frame.column(name))
        rows.append(Column(TOTAL, name))
        h.append(tau)
    if targets.include_size_constraint:
        cols.append(np.ones(frame.n))
        rows.append(Column(SIZE))
        h.append(targets.N)
    for name, alpha, q in targets.quantiles:
        cols.append(quantile_pseudo_variable(frame.column(name), q, alpha, targets.N))
        rows.append(Column(QUANTILE, name, alpha, q))
        h.append(alpha)
    A = np.column_stack(cols) if cols else np.empty((frame.n, 0))
    return ConstraintSystem(A, np.asarray(h, dtype=float), tuple(rows), targets.N)


def rescale_system(system: ConstraintSystem, c: float) -> ConstraintSystem:
    """Condition a system without changing its solution set.

    Total and size columns and their targets are divided by ``c``; quantile
    columns and their targets are multiplied by ``c``.
    """
    if not c > 0:
        raise ValueError(f"scale factor must be positive, got {c}")
    if c == 1:
        return system
    factor = np.array([c if col.kind == QUANTILE else 1.0 / c for col in system.columns])
    return replace(system, A=system.A * factor, h=system.h * factor, scale=system.scale * c)


def residuals(system: ConstraintSystem, w) -> np.ndarray:
    """``A^T w - h`` in the system's own scale."""
    w = np.asarray(w, dtype=float)
    if w.shape != (system.n,):
        raise ValueError(f"expected {system.n} weights, got {w.shape}")
    return system.A.T @ w - system.h


def relative_residuals(system: ConstraintSystem, w) -> np.ndarray:
    """Residuals divided by ``max(1, |h_j|)`` column by column."""
    return np.abs(residuals(system, w)) / np.maximum(1.0, np.abs(system.h))
