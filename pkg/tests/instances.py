"""Random calibration problems that are feasible by construction."""

import numpy as np

from jointcal import SampleFrame, TargetSpec
from jointcal.interp_cdf import h_interp_vector


def random_instance(rng, n_max=50, max_totals=3, max_quantiles=3, ratio_spread=0.3):
    """Sample frame plus targets reproduced exactly by some positive weights.

    A reference weight vector ``w*`` with ratios ``w*/d`` in
    ``exp(+-ratio_spread)`` defines every target (size, totals and the
    quantile orders at interior cut points), so raking, quadratic and logit
    with bounds (0.5, 2) all have a feasible solution.
    """
    n_tot = int(rng.integers(0, max_totals + 1))
    n_q = int(rng.integers(0, max_quantiles + 1))
    if n_tot + n_q == 0:
        n_tot = 1
    lo = max(12, 4 * (n_tot + n_q + 1))
    n = int(rng.integers(lo, max(lo, n_max) + 1))
    n_x = max(n_tot, 1)
    X = rng.normal(size=(n, n_x)) * rng.uniform(0.5, 20, size=n_x) + rng.uniform(-5, 50, size=n_x)
    names = [f"x{j + 1}" for j in range(n_x)]
    d = rng.uniform(1, 10, size=n)
    w_star = d * np.exp(rng.uniform(-ratio_spread, ratio_spread, size=n))
    N = float(w_star.sum())
    totals = {names[j]: float(w_star @ X[:, j]) for j in range(n_tot)}
    quantiles = []
    used = set()
    for _ in range(n_q):
        j = int(rng.integers(n_x))
        col = np.sort(X[:, j])
        # interior cut point strictly between two order statistics
        i = int(rng.integers(n // 5, 4 * n // 5))
        Q = float(col[i] + rng.uniform(0.1, 0.9) * (col[i + 1] - col[i]))
        if (names[j], round(Q, 12)) in used:
            continue
        used.add((names[j], round(Q, 12)))
        alpha = float(w_star @ h_interp_vector(X[:, j], Q) / N)
        quantiles.append((names[j], alpha, Q))
    frame = SampleFrame.from_arrays(d, X, names)
    return frame, TargetSpec(N, totals, quantiles), w_star
