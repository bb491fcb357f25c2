"""Design-based Monte Carlo comparison of weighting estimators.

A finite population of ``N`` units is generated once and held fixed; each
replication draws a Poisson sample with the true propensities, builds the
weights of every requested estimator and records mean and quartile
estimates for each study variable. Metrics are Bias, SE (``R - 1``
denominator) and ``RMSE = sqrt(Bias^2 + SE^2)``, reported multiplied by 100.

Population model (``rho`` controls the correlation of each ``y`` with its
linear predictor)::

    x1 = z1,  x2 = z2 + 0.3 x1,  x3 = z3 + 0.2 (x1 + x2),
    x4 = z4 + 0.1 (x1 + x2 + x3)
    z1 ~ Bernoulli(0.5), z2 ~ U(0, 2), z3 ~ Exp(1), z4 ~ chi2(4)
    y = 2 + x1 + x2 + x3 + x4 + sigma * eps
    logit(pi) = theta0 + 0.1 x1 + 0.2 x2 + 0.1 x3 + 0.2 x4,  sum(pi) = n
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .constraints import build_system, relative_residuals
from .core import (CalibrationError, POPULATION_STREAM, REPLICATION_STREAM,
                   SampleFrame, TargetSpec, derive_rng)
from .distances import DistanceSpec
from .el import el_weights
from .estimators import est_quantile
from .interp_cdf import population_quantile
from .propensity import PropensityError, fit_propensity, ipw_weights
from .solvers import SolverOptions, solve_dual

ESTIMATORS = ("Naive", "IPW", "CAL", "QCAL1", "QCAL2", "EL", "QEL1", "QEL2")
# true-propensity Horvitz-Thompson weights; used to check unbiasedness
ORACLE = "IPW_ORACLE"
PARAMETERS = ("mean", "Q25", "Q50", "Q75")
PARAMETER_ALPHA = {"Q25": 0.25, "Q50": 0.5, "Q75": 0.75}
X_NAMES = ("x1", "x2", "x3", "x4")
QUANTILE_VARIABLES = ("x2", "x3", "x4")
# quartiles 0.25/0.75 plus deciles 0.1..0.9
QUANTILE_ORDERS = tuple(sorted({0.25, 0.75} | {round(k / 10, 10) for k in range(1, 10)}))
PROPENSITY_COEF = np.array([0.1, 0.2, 0.1, 0.2])
OUTCOME_INTERCEPT = 2.0
CALIBRATION_AUDIT_TOL = 1e-8
MAX_REDRAWS = 100


@dataclass(frozen=True)
class SimConfig:
    N: int = 20000
    n: int = 10000
    rho_list: tuple = (0.3, 0.5, 0.8)
    R: int = 1000
    master_seed: int = 20230101
    estimators: tuple = ESTIMATORS
    parameters: tuple = PARAMETERS
    distance: DistanceSpec = field(default_factory=DistanceSpec)

    def __post_init__(self):
        object.__setattr__(self, "rho_list", tuple(float(r) for r in self.rho_list))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "parameters", tuple(self.parameters))
        if not 0 < self.n <= self.N:
            raise ValueError(f"need 0 < n <= N, got n={self.n}, N={self.N}")
        if not self.rho_list or any(not 0 < r < 1 for r in self.rho_list):
            raise ValueError(f"every rho must lie in (0,1), got {self.rho_list}")
        if self.R < 1:
            raise ValueError("R must be at least 1")
        unknown = set(self.estimators) - set(ESTIMATORS) - {ORACLE}
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        unknown = set(self.parameters) - set(PARAMETERS)
        if unknown:
            raise ValueError(f"unknown parameters: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        data = dict(data)
        known = {"N", "n", "rho_list", "R", "master_seed", "estimators", "parameters", "distance"}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        dist = data.pop("distance", None)
        if dist is not None:
            dist = dict(dist)
            kind = dist.pop("kind", "raking")
            bounds = None
            if "L" in dist or "U" in dist:
                bounds = (float(dist.pop("L")), float(dist.pop("U")))
            if dist:
                raise ValueError(f"unknown distance keys: {sorted(dist)}")
            data["distance"] = DistanceSpec(kind, bounds)
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        dist = {"kind": self.distance.kind}
        if self.distance.bounds:
            dist["L"], dist["U"] = self.distance.bounds
        out["distance"] = dist
        for key in ("rho_list", "estimators", "parameters"):
            out[key] = list(out[key])
        return out

    @property
    def y_names(self) -> tuple:
        return tuple(f"y{j + 1}" for j in range(len(self.rho_list)))


@dataclass(frozen=True)
class Population:
    X: np.ndarray
    Y: np.ndarray
    pi: np.ndarray
    sigma: np.ndarray
    theta0: float
    rho: tuple
    truths: dict
    linpred: np.ndarray

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def y_names(self) -> tuple:
        return tuple(f"y{j + 1}" for j in range(self.Y.shape[1]))

    def totals(self) -> dict:
        return {name: float(self.X[:, j].sum()) for j, name in enumerate(X_NAMES)}

    def quantile_targets(self) -> tuple:
        out = []
        for name in QUANTILE_VARIABLES:
            col = self.X[:, X_NAMES.index(name)]
            out.extend((name, a, population_quantile(col, a)) for a in QUANTILE_ORDERS)
        return tuple(out)


def solve_sigma(linpred, rho: float) -> float:
    """Noise scale giving ``corr(linpred + sigma * eps, linpred) = rho``."""
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0,1], got {rho}")
    sd = float(np.std(np.asarray(linpred, dtype=float)))
    if not sd > 0:
        raise ValueError("linear predictor has zero variance")
    return sd * math.sqrt(1.0 / rho**2 - 1.0)


def solve_theta0(X, n: float, beta=PROPENSITY_COEF) -> float:
    """Intercept with ``sum_k expit(theta0 + beta^T x_k) = n``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    eta = X @ np.asarray(beta, dtype=float)
    N = eta.size
    if not 0 < n < N:
        raise ValueError(f"need 0 < n < N, got n={n}, N={N}")

    def f(t):
        return float(expit(t + eta).sum() - n)

    # f is increasing; widen the bracket around the constant-pi solution
    centre = math.log(n / (N - n))
    lo, hi = centre - eta.max() - 1.0, centre - eta.min() + 1.0
    while f(lo) > 0:
        lo -= 10.0
    while f(hi) < 0:
        hi += 10.0
    root = brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(f(root)) > 1e-6:
        raise RuntimeError(f"theta0 root not accurate: f = {f(root)}")
    return float(root)


def gen_population(cfg: SimConfig, seed: int) -> Population:
    """Generate the finite population for ``cfg`` from the stream of ``seed``."""
    rng = derive_rng(seed, POPULATION_STREAM)
    N = cfg.N
    z1 = rng.binomial(1, 0.5, N).astype(float)
    z2 = rng.uniform(0.0, 2.0, N)
    z3 = -np.log1p(-rng.random(N))
    z4 = np.sum(rng.standard_normal((N, 4)) ** 2, axis=1)
    x1 = z1
    x2 = z2 + 0.3 * x1
    x3 = z3 + 0.2 * (x1 + x2)
    x4 = z4 + 0.1 * (x1 + x2 + x3)
    X = np.column_stack([x1, x2, x3, x4])
    linpred = OUTCOME_INTERCEPT + X.sum(axis=1)
    sigma = np.array([solve_sigma(linpred, rho) for rho in cfg.rho_list])
    eps = rng.standard_normal((N, len(cfg.rho_list)))
    Y = linpred[:, None] + eps * sigma[None, :]
    theta0 = solve_theta0(X, cfg.n)
    pi = expit(theta0 + X @ PROPENSITY_COEF)
    truths = {}
    for j, name in enumerate(cfg.y_names):
        truths[(name, "mean")] = float(Y[:, j].mean())
        for param, alpha in PARAMETER_ALPHA.items():
            truths[(name, param)] = population_quantile(Y[:, j], alpha)
    for arr in (X, Y, pi, sigma, linpred):
        arr.flags.writeable = False
    return Population(X, Y, pi, sigma, theta0, cfg.rho_list, truths, linpred)


def poisson_sample(pi, seed) -> np.ndarray:
    """Indices selected by independent Bernoulli(pi_k) draws.

    ``seed`` is an integer or a ``numpy.random.Generator``.
    """
    pi = np.asarray(pi, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else derive_rng(seed)
    return np.flatnonzero(rng.random(pi.size) < pi)


@dataclass
class ReplicationResult:
    r: int
    estimates: dict
    failures: dict
    sample_size: int
    redraws: int
    max_residual: dict


def _draw(pop: Population, master_seed: int, r: int):
    for attempt in range(MAX_REDRAWS):
        idx = poisson_sample(pop.pi, derive_rng(master_seed, REPLICATION_STREAM, r, attempt))
        if idx.size:
            return idx, attempt
    raise RuntimeError(f"replication {r}: {MAX_REDRAWS} empty samples in a row")


def _calibrated(frame, targets, d, distance):
    system = build_system(frame, targets)
    ws = solve_dual(system, d, distance, SolverOptions())
    if not ws.converged:
        raise CalibrationError(ws.diagnostics.message or "solver did not converge")
    res = float(np.max(relative_residuals(system, ws.w), initial=0.0))
    if res > CALIBRATION_AUDIT_TOL:
        raise CalibrationError(f"residual audit failed ({res:.3g})")
    return np.asarray(ws.w), res


def _weights_for(name, pop, cfg, idx, frame, targets):
    """Return ``(weights, mean denominator, max residual or None)``."""
    N = float(pop.N)
    if name == "Naive":
        return np.ones(idx.size), float(idx.size), None
    if name == ORACLE:
        return 1.0 / pop.pi[idx], N, None
    if name == "IPW":
        fit = fit_propensity(pop.X[idx], pop.X)
        return ipw_weights(fit), N, None
    if name in ("CAL", "QCAL1", "QCAL2"):
        w, res = _calibrated(frame, targets[name], frame.d, cfg.distance)
        return w, N, res
    el_targets = {"EL": "CAL", "QEL1": "QCAL1", "QEL2": "QCAL2"}[name]
    w, fit = el_weights(frame, targets[el_targets])
    if not fit.converged:
        raise CalibrationError(fit.message or "EL did not converge")
    return w, N, None


def run_replication(pop: Population, cfg: SimConfig, r: int) -> ReplicationResult:
    """Draw sample ``r`` and compute every requested estimate.

    Estimators whose weights cannot be computed get NaN estimates and a
    recorded reason; the replication itself is kept.
    """
    idx, redraws = _draw(pop, cfg.master_seed, r)
    N = float(pop.N)
    Xs = pop.X[idx]
    Ys = pop.Y[idx]
    frame = SampleFrame.from_arrays(np.full(idx.size, N / idx.size), Xs, X_NAMES)
    totals = pop.totals()
    quantiles = pop.quantile_targets()
    targets = {
        "CAL": TargetSpec(N, totals),
        "QCAL1": TargetSpec(N, {}, quantiles),
        "QCAL2": TargetSpec(N, totals, quantiles),
    }
    orders = [np.argsort(Ys[:, j], kind="stable") for j in range(Ys.shape[1])]
    estimates, failures, residual = {}, {}, {}
    for name in dict.fromkeys(cfg.estimators):
        try:
            w, denom, res = _weights_for(name, pop, cfg, idx, frame, targets)
        except (CalibrationError, PropensityError) as exc:
            failures[name] = str(exc)
            for yname in cfg.y_names:
                for param in cfg.parameters:
                    estimates[(name, yname, param)] = math.nan
            continue
        if res is not None:
            residual[name] = res
        for j, yname in enumerate(cfg.y_names):
            # pre-sorted input makes the stable sort inside the inversion cheap
            order = orders[j]
            y, wy = Ys[order, j], w[order]
            for param in cfg.parameters:
                if param == "mean":
                    value = float(wy @ y) / denom
                else:
                    value = est_quantile(wy, y, PARAMETER_ALPHA[param], denom)
                estimates[(name, yname, param)] = value
    return ReplicationResult(r, estimates, failures, int(idx.size), redraws, residual)


@dataclass(frozen=True)
class MetricRow:
    estimator: str
    variable: str
    rho: float
    parameter: str
    truth: float
    mean_estimate: float
    bias: float
    se: float
    rmse: float
    n_valid: int
    n_missing: int
    se_defined: bool

    @property
    def bias_x100(self) -> float:
        return 100.0 * self.bias

    @property
    def se_x100(self) -> float:
        return 100.0 * self.se

    @property
    def rmse_x100(self) -> float:
        return 100.0 * self.rmse


CSV_FIELDS = ("estimator", "variable", "rho", "parameter", "truth", "mean_estimate",
              "bias_x100", "se_x100", "rmse_x100", "n_valid", "n_missing", "se_defined")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.10g}"


@dataclass
class MetricsTable:
    rows: list
    metadata: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def get(self, estimator: str, variable: str, parameter: str) -> MetricRow:
        for row in self.rows:
            if (row.estimator, row.variable, row.parameter) == (estimator, variable, parameter):
                return row
        raise KeyError((estimator, variable, parameter))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for row in self.rows:
            writer.writerow([_fmt(getattr(row, f)) for f in CSV_FIELDS])
        return buf.getvalue()

    def to_markdown(self) -> str:
        """Estimator rows by (Bias, SE, RMSE) per variable, one block per parameter."""
        estimators = list(dict.fromkeys(r.estimator for r in self.rows))
        variables = list(dict.fromkeys(r.variable for r in self.rows))
        parameters = list(dict.fromkeys(r.parameter for r in self.rows))
        rho = {r.variable: r.rho for r in self.rows}
        titles = {"mean": "Mean", "Q25": "1st quartile (25%)", "Q50": "2nd quartile (50%)",
                  "Q75": "3rd quartile (75%)"}
        head = ["Estimator"]
        for v in variables:
            head += [f"{v} (rho={rho[v]:g}) Bias", "SE", "RMSE"]
        lines = ["All numbers multiplied by 100.", ""]
        for param in parameters:
            lines += [f"### {titles[param]}", ""]
            lines.append("| " + " | ".join(head) + " |")
            lines.append("|" + "|".join(["---"] + ["---:"] * (3 * len(variables))) + "|")
            for est in estimators:
                cells = [est]
                for v in variables:
                    row = self.get(est, v, param)
                    cells += [f"{row.bias_x100:.2f}", f"{row.se_x100:.2f}", f"{row.rmse_x100:.2f}"]
                lines.append("| " + " | ".join(cells) + " |")
            lines.append("")
        return "\n".join(lines)


def summarize(values, truth: float):
    """Bias, SE and RMSE of replicate estimates; NaNs count as missing."""
    values = np.asarray(values, dtype=float)
    ok = values[~np.isnan(values)]
    if ok.size == 0:
        return math.nan, math.nan, math.nan, math.nan, 0, False
    mean = float(ok.mean())
    bias = mean - truth
    se_defined = ok.size > 1
    se = float(np.sqrt(np.sum((ok - mean) ** 2) / (ok.size - 1))) if se_defined else 0.0
    rmse = math.sqrt(bias * bias + se * se)
    return mean, bias, se, rmse, int(ok.size), se_defined


_WORKER = {}


def _init_worker(pop, cfg):
    _WORKER["pop"] = pop
    _WORKER["cfg"] = cfg


def _worker(r):
    return run_replication(_WORKER["pop"], _WORKER["cfg"], r)


def run_replications(pop: Population, cfg: SimConfig, threads: int = 1) -> list:
    if threads <= 1 or cfg.R == 1:
        return [run_replication(pop, cfg, r) for r in range(cfg.R)]
    chunk = max(1, cfg.R // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                             initargs=(pop, cfg)) as ex:
        results = list(ex.map(_worker, range(cfg.R), chunksize=chunk))
    return sorted(results, key=lambda res: res.r)


def tabulate(pop: Population, cfg: SimConfig, results: list) -> MetricsTable:
    rows = []
    for est in cfg.estimators:
        for j, yname in enumerate(cfg.y_names):
            for param in cfg.parameters:
                values = [res.estimates[(est, yname, param)] for res in results]
                truth = pop.truths[(yname, param)]
                mean, bias, se, rmse, n_ok, se_ok = summarize(values, truth)
                rows.append(MetricRow(est, yname, cfg.rho_list[j], param, truth, mean,
                                      bias, se, rmse, n_ok, len(values) - n_ok, se_ok))
    failures = {}
    for res in results:
        for est, reason in res.failures.items():
            failures.setdefault(est, []).append((res.r, reason))
    metadata = {
        "population": "fixed across replications (design-based)",
        "replications": cfg.R,
        "theta0": pop.theta0,
        "sigma": [float(s) for s in pop.sigma],
        "mean_sample_size": float(np.mean([res.sample_size for res in results])),
        "redraws": int(sum(res.redraws for res in results)),
        "max_calibration_residual": max(
            (v for res in results for v in res.max_residual.values()), default=0.0),
        "ipw_mean_denominator": "N",
        "ipw_quantile_normalization": "sum of weights",
    }
    return MetricsTable(rows, metadata, failures)


def monte_carlo(cfg: SimConfig, threads: int = 1) -> MetricsTable:
    """Run the full study for ``cfg`` and return the metrics table."""
    pop = gen_population(cfg, cfg.master_seed)
    return tabulate(pop, cfg, run_replications(pop, cfg, threads))
