"""Calibration weight solvers.

``solve_quadratic`` evaluates the closed-form linear (GREG-type) weights.
``solve_dual`` handles every distance through Newton iterations on the
Lagrange multipliers: with ``u_k = q_k x_k^T lam`` the weights are
``w_k = d_k F(u_k)`` and ``lam`` minimises the convex dual
``sum_k d_k / q_k G*(u_k) - lam^T h``, whose gradient is the calibration
residual ``A^T w - h``. Steps are halved until the dual decreases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .constraints import ConstraintSystem, relative_residuals, rescale_system, residuals
from .core import Diagnostics, InfeasibleError, RankDeficientError, WeightSet
from .distances import DistanceSpec, distance_value

PIVOT_THRESHOLD = 1e-12


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 100
    tolerance: float = 1e-8
    damping: int = 30
    rescale: bool = True

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


class _Factor:
    """Pivoted QR of a symmetric PSD matrix after unit-diagonal equilibration.

    Equilibration keeps the rank test independent of column units (totals in
    the thousands next to pseudo-variables of order 1/N).
    """

    def __init__(self, J: np.ndarray, labels):
        m = J.shape[0]
        diag = np.diag(J).copy()
        dead = np.flatnonzero(~(diag > 0))
        if dead.size:
            raise RankDeficientError(
                "constraint columns are identically zero: " + ", ".join(labels[j] for j in dead),
                [labels[j] for j in dead])
        self.s = 1.0 / np.sqrt(diag)
        Js = J * self.s[:, None] * self.s[None, :]
        self.Q, self.R, self.piv = scipy.linalg.qr(Js, pivoting=True)
        pivots = np.abs(np.diag(self.R))
        rank = int(np.sum(pivots > PIVOT_THRESHOLD * pivots[0])) if m else 0
        if rank < m:
            bad = [labels[j] for j in self.piv[rank:]]
            raise RankDeficientError(
                f"constraint matrix has rank {rank} < {m}; dependent columns: " + ", ".join(bad), bad)

    def solve(self, b: np.ndarray) -> np.ndarray:
        z = scipy.linalg.solve_triangular(self.R, self.Q.T @ (self.s * b))
        out = np.empty_like(z)
        out[self.piv] = z
        return self.s * out


def _check_inputs(system: ConstraintSystem, d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.shape != (system.n,):
        raise ValueError(f"expected {system.n} design weights, got shape {d.shape}")
    if np.any(~(d > 0)) or not np.all(np.isfinite(d)):
        raise ValueError("design weights must be positive and finite")
    return d


def _working(system: ConstraintSystem, rescale: bool) -> ConstraintSystem:
    if rescale and system.N > 0:
        return rescale_system(system, system.N)
    return system


def _weight_set(system, d, w, spec, iterations, converged, message=""):
    res = residuals(system, w)
    ratio = w / d
    diag = Diagnostics(
        max_abs_residual=float(np.max(np.abs(res), initial=0.0)),
        max_rel_residual=float(np.max(relative_residuals(system, w), initial=0.0)),
        iterations=iterations,
        distance_value=distance_value(spec, d, w),
        ratio_min=float(ratio.min()),
        ratio_max=float(ratio.max()),
        converged=converged,
        message=message,
    )
    return WeightSet(w, diag)


def solve_quadratic(system: ConstraintSystem, d, q=None, tolerance: float = 1e-8,
                    rescale: bool = True) -> WeightSet:
    """Closed-form weights under the quadratic distance.

    ``w_k = d_k + d_k q_k (h - A^T d)^T (sum_j d_j q_j x_j x_j^T)^{-1} x_k``.

    Raises:
        RankDeficientError: the weighted Gram matrix is singular.
        InfeasibleError: the resulting residual does not vanish.
    """
    d = _check_inputs(system, d)
    spec = DistanceSpec("quadratic", q=None if q is None else tuple(q))
    qv = spec.q_vector(system.n)
    work = _working(system, rescale)
    A = work.A
    if work.m == 0:
        return _weight_set(system, d, d.copy(), spec, 0, True)
    gram = (A * (d * qv)[:, None]).T @ A
    coef = _Factor(gram, system.labels).solve(work.h - A.T @ d)
    w = d + d * qv * (A @ coef)
    ws = _weight_set(system, d, w, spec, 1, True)
    if ws.diagnostics.max_rel_residual > tolerance:
        raise InfeasibleError(
            f"calibration equations not satisfied (max relative residual "
            f"{ws.diagnostics.max_rel_residual:.3g})")
    return ws


def solve_dual(system: ConstraintSystem, d, distance: DistanceSpec | None = None,
               opts: SolverOptions | None = None) -> WeightSet:
    """Calibration weights for any supported distance by damped dual Newton.

    Convergence is declared when every equation of the original system has
    ``|residual| / max(1, |h_j|) <= opts.tolerance``. Failure to converge
    (iteration limit, unreachable targets) is reported through
    ``diagnostics.converged`` with the best iterate; a structurally singular
    system raises :class:`RankDeficientError`.
    """
    distance = distance or DistanceSpec()
    opts = opts or SolverOptions()
    d = _check_inputs(system, d)
    q = distance.q_vector(system.n)
    fn = distance.functions()
    work = _working(system, opts.rescale)
    A, h = work.A, work.h
    labels = system.labels

    def dual(lam):
        u = q * (A @ lam)
        with np.errstate(over="ignore", invalid="ignore"):
            phi = float(np.sum(d / q * fn.conj(u)) - lam @ h)
        return u, phi

    lam = np.zeros(work.m)
    u, phi = dual(lam)
    iterations = 0
    message = ""
    converged = False
    while True:
        w = d * fn.F(u)
        if np.all(np.isfinite(w)) and np.max(relative_residuals(system, w), initial=0.0) <= opts.tolerance:
            converged = True
            break
        if iterations >= opts.max_iterations:
            message = f"no convergence after {iterations} iterations"
            break
        grad = A.T @ w - h
        J = (A * (d * q * fn.dF(u))[:, None]).T @ A
        try:
            step = _Factor(J, labels).solve(grad)
        except RankDeficientError as exc:
            if iterations == 0:
                raise
            message = f"Jacobian became singular at iteration {iterations}: {exc}"
            break
        t = 1.0
        slack = 1e-10 * (1.0 + abs(phi))
        for _ in range(opts.damping + 1):
            lam_new = lam - t * step
            u_new, phi_new = dual(lam_new)
            if np.isfinite(phi_new) and phi_new <= phi + slack:
                break
            t *= 0.5
        else:
            message = f"step halving failed at iteration {iterations}; targets may be unreachable"
            break
        lam, u, phi = lam_new, u_new, phi_new
        iterations += 1
    return _weight_set(system, d, d * fn.F(u), distance, iterations, converged, message)
