"""Shared domain types, input validation and seed derivation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class CalibrationError(Exception):
    """Base class for errors raised by the calibration machinery."""


class RankDeficientError(CalibrationError):
    """The constraint matrix does not have full column rank."""

    def __init__(self, message: str, columns: Sequence[str] = ()):
        super().__init__(message)
        self.columns = tuple(columns)


class InfeasibleError(CalibrationError):
    """The calibration equations cannot be satisfied."""


def _frozen(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SampleFrame:
    """A sample: unit ids, design weights, auxiliary matrix and study variables.

    The row order of the frame is the canonical unit order used by every
    matrix built from it. Content checks (positive weights, finite values)
    are left to :func:`validate_frame` so that invalid frames can still be
    constructed and reported on.
    """

    ids: tuple
    d: np.ndarray
    X: np.ndarray
    x_names: tuple
    y: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        d = _frozen(self.d, 1)
        X = np.array(self.X, dtype=float, copy=True)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.size == 0 and X.ndim != 2:
            X = X.reshape(len(d), 0)
        X.flags.writeable = False
        ids = tuple(str(i) for i in self.ids)
        names = tuple(str(c) for c in self.x_names)
        if len(ids) != len(d):
            raise ValueError(f"{len(ids)} ids but {len(d)} design weights")
        if X.shape != (len(d), len(names)):
            raise ValueError(
                f"X has shape {X.shape}, expected ({len(d)}, {len(names)})")
        y = {}
        for name, col in dict(self.y).items():
            col = _frozen(col, 1)
            if len(col) != len(d):
                raise ValueError(f"study variable {name!r} has length {len(col)}, expected {len(d)}")
            y[str(name)] = col
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "x_names", names)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_arrays(cls, d, X=None, names=None, y=None, ids=None) -> "SampleFrame":
        d = np.asarray(d, dtype=float)
        if X is None:
            X = np.empty((len(d), 0))
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if names is None:
            names = [f"x{j + 1}" for j in range(X.shape[1])]
        if ids is None:
            ids = [str(k + 1) for k in range(len(d))]
        return cls(ids=tuple(ids), d=d, X=X, x_names=tuple(names), y=dict(y or {}))

    @property
    def n(self) -> int:
        return len(self.d)

    def column(self, name: str) -> np.ndarray:
        """Return an auxiliary or study column by name."""
        if name in self.x_names:
            return self.X[:, self.x_names.index(name)]
        if name in self.y:
            return self.y[name]
        raise KeyError(name)

    def has_column(self, name: str) -> bool:
        return name in self.x_names or name in self.y


@dataclass(frozen=True)
class TargetSpec:
    """Known population benchmarks.

    Attributes:
        N: population size.
        totals: variable name -> population total.
        quantiles: ``(variable, alpha, Q)`` triples.
        include_size_constraint: add the ``sum(w) = N`` equation.
    """

    N: float
    totals: Mapping[str, float] = field(default_factory=dict)
    quantiles: tuple = ()
    include_size_constraint: bool = True

    def __post_init__(self):
        object.__setattr__(self, "N", float(self.N))
        object.__setattr__(self, "totals", {str(k): float(v) for k, v in dict(self.totals).items()})
        object.__setattr__(
            self, "quantiles",
            tuple((str(v), float(a), float(q)) for v, a, q in self.quantiles))

    def variables(self) -> list:
        names = list(self.totals)
        for var, _, _ in self.quantiles:
            if var not in names:
                names.append(var)
        return names


@dataclass(frozen=True)
class Issue:
    """One violated invariant. ``index`` is the 1-based unit position, if any."""

    code: str
    message: str
    index: int | None = None


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def __len__(self) -> int:
        return len(self.issues)

    def __iter__(self):
        return iter(self.issues)

    def codes(self) -> list:
        return [i.code for i in self.issues]

    def summary(self) -> str:
        return "; ".join(i.message for i in self.issues)


def validate_frame(frame: SampleFrame, targets: TargetSpec) -> ValidationReport:
    """Check that a frame and a set of targets can be calibrated together.

    Returns a report listing every violated invariant; the report is empty
    iff the inputs are jointly usable. Never raises on bad content.
    """
    issues = []
    if frame.n < 1:
        issues.append(Issue("empty_frame", "sample has no units"))
    finite = np.isfinite(frame.d)
    for k in np.flatnonzero(~finite):
        issues.append(Issue("nonfinite_weight", f"design weight at index {k + 1} is not finite", int(k) + 1))
    for k in np.flatnonzero(finite & (frame.d <= 0)):
        issues.append(Issue("nonpositive_weight", f"non-positive design weight at index {k + 1}", int(k) + 1))
    all_names = list(frame.x_names) + list(frame.y)
    seen = set()
    for name in all_names:
        if name in seen:
            issues.append(Issue("duplicate_column", f"column name {name!r} is not unique"))
        seen.add(name)

    if not (math.isfinite(targets.N) and targets.N > 0):
        issues.append(Issue("bad_population_size", f"population size N={targets.N} must be positive"))
    for name, tau in targets.totals.items():
        if not math.isfinite(tau):
            issues.append(Issue("nonfinite_target", f"total target for {name!r} is not finite"))
    pairs = set()
    for var, alpha, q in targets.quantiles:
        if not 0.0 < alpha < 1.0:
            issues.append(Issue(
                "alpha_out_of_range",
                f"quantile order alpha={alpha} for {var!r} is outside (0,1)"))
        if not math.isfinite(q):
            issues.append(Issue("nonfinite_target", f"quantile target for {var!r} at alpha={alpha} is not finite"))
        if (var, alpha) in pairs:
            issues.append(Issue("duplicate_quantile", f"quantile ({var!r}, alpha={alpha}) listed twice"))
        pairs.add((var, alpha))

    for var in targets.variables():
        if not frame.has_column(var):
            issues.append(Issue("missing_column", f"target variable {var!r} is not a column of the sample"))
            continue
        col = frame.column(var)
        bad = np.flatnonzero(~np.isfinite(col))
        if len(bad):
            issues.append(Issue(
                "missing_values",
                f"column {var!r} has missing or non-finite values (first at index {bad[0] + 1})",
                int(bad[0]) + 1))
    return ValidationReport(tuple(issues))


# Fixed spawn keys: the population stream and the replication streams never
# share a key, so adding replications does not perturb the population.
POPULATION_STREAM = 0
REPLICATION_STREAM = 1


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under ``master_seed``.

    A pure function of its arguments: the same (seed, key) always gives the
    same stream, independent of call order or thread.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1),
                                spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class Diagnostics:
    max_abs_residual: float
    max_rel_residual: float
    iterations: int
    distance_value: float
    ratio_min: float
    ratio_max: float
    converged: bool
    message: str = ""


@dataclass(frozen=True)
class WeightSet:
    """Calibrated weights plus solver diagnostics."""

    w: np.ndarray
    diagnostics: Diagnostics

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen(self.w, 1))
