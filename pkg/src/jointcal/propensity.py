"""Logistic propensity scores for a non-probability sample.

The fit solves the calibration-form estimating equations

    sum_{k in s} (1, x_k) = sum_{k in U} pi(theta; x_k) (1, x_k)

which are the gradient of the concave function
``theta^T sum_s z_k - sum_U log(1 + exp(theta^T z_k))``; Newton steps are
halved until the score norm decreases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

_MAX_HALVINGS = 25


class PropensityError(ValueError):
    pass


@dataclass(frozen=True)
class PropensityFit:
    theta: np.ndarray
    pi_sample: np.ndarray
    converged: bool
    iterations: int
    score: np.ndarray
    message: str = ""


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return np.column_stack([np.ones(X.shape[0]), X])


def fit_propensity(sample_X, population_X, max_iterations: int = 50,
                   tolerance: float = 1e-10) -> PropensityFit:
    """Fit ``pi(x) = 1 / (1 + exp(-theta_0 - theta^T x))`` to a sample.

    Args:
        sample_X: covariates of the sampled units (n x p); p may be 0.
        population_X: covariates of the whole population (N x p).
        tolerance: convergence when every score component is below
            ``tolerance`` times the population column norm ``sum_U |z_j|``.
    """
    Zs = _design(sample_X)
    Zu = _design(population_X)
    if Zs.shape[1] != Zu.shape[1]:
        raise ValueError("sample and population covariates have different widths")
    n, N = Zs.shape[0], Zu.shape[0]
    target = Zs.sum(axis=0)
    norms = np.abs(Zu).sum(axis=0)
    norms[norms == 0] = 1.0
    theta = np.zeros(Zu.shape[1])
    if not 0 < n < N:
        pi = np.full(n, min(max(n / N, 0.0), 1.0))
        return PropensityFit(theta, pi, False, 0, np.full(theta.size, np.nan),
                             f"need 0 < n < N for probabilities in (0,1), got n={n}, N={N}")
    theta[0] = np.log(n / (N - n))

    def score(theta):
        return target - Zu.T @ expit(Zu @ theta)

    def objective(theta):
        eta = Zu @ theta
        return float(theta @ target - np.sum(np.logaddexp(0.0, eta)))

    U = score(theta)
    obj = objective(theta)
    converged = False
    message = ""
    it = 0
    while True:
        if np.all(np.abs(U) <= tolerance * norms):
            converged = True
            break
        if it >= max_iterations:
            message = f"no convergence after {it} iterations"
            break
        p = expit(Zu @ theta)
        info = (Zu * (p * (1 - p))[:, None]).T @ Zu
        try:
            step = np.linalg.solve(info, U)
        except np.linalg.LinAlgError:
            message = "singular information matrix"
            break
        t = 1.0
        for _ in range(_MAX_HALVINGS + 1):
            cand = theta + t * step
            U_new = score(cand)
            obj_new = objective(cand)
            if np.linalg.norm(U_new) < np.linalg.norm(U) or obj_new > obj:
                break
            t *= 0.5
        else:
            message = f"step halving failed at iteration {it}; possible separation"
            break
        theta, U, obj = cand, U_new, obj_new
        it += 1
    pi_sample = expit(Zs @ theta)
    return PropensityFit(theta, pi_sample, converged, it, U, message)


def ipw_weights(fit: PropensityFit) -> np.ndarray:
    """Inverse fitted probabilities for the sampled units."""
    if not fit.converged:
        raise PropensityError(f"propensity fit did not converge: {fit.message}")
    pi = np.asarray(fit.pi_sample, dtype=float)
    if np.any(pi <= 0):
        raise PropensityError("fitted inclusion probability of zero")
    return 1.0 / pi
