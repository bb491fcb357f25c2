"""Empirical-likelihood weighting with mean and quantile constraints.

Maximises ``sum_k log p_k`` subject to ``sum p_k = 1`` and ``sum p_k u_k = 0``
for centred constraint vectors ``u_k``. The solution is
``p_k = 1 / (n (1 + lam^T u_k))`` where ``lam`` maximises the concave
``sum_k log(1 + lam^T u_k)``; Newton steps are halved until every
``1 + lam^T u_k`` stays positive and the objective does not drop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import quantile_pseudo_variable
from .core import SampleFrame, TargetSpec, validate_frame
from .solvers import SolverOptions

_POLISH_STEPS = 3


@dataclass(frozen=True)
class ELWeights:
    p: np.ndarray
    lam: np.ndarray
    converged: bool
    iterations: int = 0
    message: str = ""


def _log_objective(v, lam):
    t = 1.0 + v @ lam
    if np.any(t <= 0):
        return t, -np.inf
    return t, float(np.sum(np.log(t)))


def solve_el(u, opts: SolverOptions | None = None) -> ELWeights:
    """Empirical-likelihood probabilities for centred constraints ``u`` (n x m).

    Convergence requires ``|sum_k p_k u_kj| <= tolerance`` on columns scaled
    to unit root-mean-square and ``|sum_k p_k - 1| <= tolerance``. If zero is not inside the convex hull of the
    rows of ``u`` the multipliers diverge and ``converged`` is False.
    """
    opts = opts or SolverOptions()
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, 1)
    n, m = u.shape
    if n == 0:
        raise ValueError("empty sample")
    lam_full = np.zeros(m)
    if m == 0:
        return ELWeights(np.full(n, 1.0 / n), lam_full, True)

    # Zero columns are satisfied by any p; drop them from the Newton system.
    scale = np.sqrt(np.mean(u * u, axis=0))
    live = np.flatnonzero(scale > 0)
    v = u[:, live] / scale[live]
    lam = np.zeros(live.size)
    t, obj = _log_objective(v, lam)

    def gradient(t):
        return v.T @ (1.0 / t) / n

    iterations = 0
    converged = False
    message = ""
    polish = 0
    while True:
        g = gradient(t)
        gnorm = np.max(np.abs(g), initial=0.0)
        # a vanishing gradient alone is not enough: when 0 is outside the
        # hull every p_k shrinks towards 0 as lam diverges
        mass_gap = abs(np.mean(1.0 / t) - 1.0)
        if gnorm <= opts.tolerance and mass_gap <= opts.tolerance:
            converged = True
            if polish >= _POLISH_STEPS or gnorm == 0.0:
                break
        if iterations >= opts.max_iterations:
            if not converged:
                message = f"no convergence after {iterations} iterations"
            break
        vt = v / t[:, None]
        H = vt.T @ vt / n
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            message = "singular Hessian; constraints are linearly dependent"
            break
        tau = 1.0
        accepted = False
        for _ in range(opts.damping + 1):
            lam_new = lam + tau * step
            t_new, obj_new = _log_objective(v, lam_new)
            if np.isfinite(obj_new) and obj_new >= obj - 1e-12 * (1.0 + abs(obj)):
                accepted = True
                break
            tau *= 0.5
        if converged:
            # polishing: keep only steps that shrink the gradient further
            if not accepted or np.max(np.abs(gradient(t_new))) >= gnorm:
                break
            polish += 1
        elif not accepted:
            message = f"step halving failed at iteration {iterations}; zero may lie outside the convex hull"
            break
        lam, t, obj = lam_new, t_new, obj_new
        iterations += 1

    lam_full[live] = lam / scale[live]
    p = 1.0 / (n * t)
    return ELWeights(p, lam_full, converged, iterations, message)


def el_centered_constraints(frame: SampleFrame, targets: TargetSpec) -> np.ndarray:
    """Centred constraint matrix for EL weighting.

    Totals become mean constraints ``x_k - tau/N``; quantiles become
    ``a_k - alpha/N`` with the pseudo-variable ``a_k``. No size column:
    ``sum p = 1`` plays that role.
    """
    report = validate_frame(frame, targets)
    if not report.ok:
        raise ValueError(report.summary())
    N = targets.N
    cols = [frame.column(name) - tau / N for name, tau in targets.totals.items()]
    for name, alpha, q in targets.quantiles:
        cols.append(quantile_pseudo_variable(frame.column(name), q, alpha, N) - alpha / N)
    if not cols:
        return np.empty((frame.n, 0))
    return np.column_stack(cols)


def el_weights(frame: SampleFrame, targets: TargetSpec,
               opts: SolverOptions | None = None) -> tuple:
    """Return ``(N * p, ELWeights)`` for the given targets."""
    fit = solve_el(el_centered_constraints(frame, targets), opts)
    return targets.N * fit.p, fit
