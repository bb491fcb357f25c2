import math

import numpy as np
import pytest
from scipy.special import expit, logit

from jointcal import SampleFrame, TargetSpec, build_system
from jointcal.simulation import (ESTIMATORS, ORACLE, QUANTILE_ORDERS, SimConfig, gen_population,
                                 monte_carlo, poisson_sample, run_replication, solve_sigma,
                                 solve_theta0, summarize)


@pytest.fixture(scope="module")
def population():
    return gen_population(SimConfig(), SimConfig().master_seed)


def test_sigma_examples():
    # linpred with population sd exactly 1 and 2
    assert solve_sigma([-1.0, 1.0], 0.5) == pytest.approx(math.sqrt(3))
    assert solve_sigma([-2.0, 2.0], 0.8) == pytest.approx(1.5)
    assert solve_sigma([-1.0, 1.0], 1.0) == 0.0
    assert solve_sigma([-1.0, 1.0], 0.999) < 0.05
    with pytest.raises(ValueError):
        solve_sigma([1.0, 1.0], 0.5)


def test_theta0_examples(rng):
    zero = np.zeros((2, 4))
    assert solve_theta0(zero, 1) == pytest.approx(0.0, abs=1e-10)
    assert solve_theta0(np.zeros((4, 4)), 1) == pytest.approx(logit(0.25), abs=1e-10)
    X = rng.exponential(size=(5000, 4))
    t1, t2 = solve_theta0(X, 1000), solve_theta0(X, 1100)
    assert t2 > t1
    assert expit(t1 + X @ [0.1, 0.2, 0.1, 0.2]).sum() == pytest.approx(1000, abs=1e-6)


def test_poisson_sampling():
    assert poisson_sample(np.full(50, 1 - 1e-12), 3).size == 50
    idx = poisson_sample(np.full(20000, 0.5), 11)
    assert abs(idx.size - 10000) <= 4 * math.sqrt(20000 * 0.25)
    np.testing.assert_array_equal(idx, poisson_sample(np.full(20000, 0.5), 11))


def test_population_design(population):
    X, N = population.X, population.N
    for j, mean in ((0, 0.5), (1, 1.15)):
        assert abs(X[:, j].mean() - mean) <= 4 * X[:, j].std() / math.sqrt(N)
    assert set(np.unique(X[:, 0])) == {0.0, 1.0}
    assert population.pi.sum() == pytest.approx(10000, abs=1e-6)
    assert np.all((population.pi > 0) & (population.pi < 1))
    for j, rho in enumerate(population.rho):
        r = np.corrcoef(population.Y[:, j], population.linpred)[0, 1]
        assert abs(r - rho) <= 0.01


def test_population_is_reproducible(population):
    again = gen_population(SimConfig(), SimConfig().master_seed)
    np.testing.assert_array_equal(again.Y, population.Y)
    assert again.truths == population.truths


def test_quantile_targets(population):
    q = population.quantile_targets()
    assert len(q) == 3 * 11
    assert len(QUANTILE_ORDERS) == 11 and {0.25, 0.75} <= set(QUANTILE_ORDERS)
    name, alpha, Q = q[0]
    col = population.X[:, 1]
    assert np.mean(col <= Q) >= alpha > np.mean(col < Q)


def test_replication_calibrates_every_target(population):
    cfg = SimConfig(R=1, estimators=("CAL", "QCAL1", "QCAL2", "EL", "QEL1", "QEL2"))
    res = run_replication(population, cfg, 0)
    assert not res.failures
    assert set(res.max_residual) == {"CAL", "QCAL1", "QCAL2"}
    assert all(v <= 1e-8 for v in res.max_residual.values())
    idx = poisson_sample(population.pi, 0)
    frame = SampleFrame.from_arrays(np.full(idx.size, population.N / idx.size), population.X[idx],
                                    ["x1", "x2", "x3", "x4"])
    spec = TargetSpec(population.N, population.totals(), population.quantile_targets())
    # size + 4 totals + 11 orders for each of x2, x3, x4
    assert build_system(frame, spec).m == 1 + 4 + 33


def test_replication_determinism(population):
    cfg = SimConfig(R=1, estimators=("Naive", "IPW", "QCAL2"))
    a = run_replication(population, cfg, 4)
    b = run_replication(population, cfg, 4)
    assert a.estimates == b.estimates
    c = run_replication(population, cfg, 5)
    assert a.estimates != c.estimates


def test_summarize_identities():
    mean, bias, se, rmse, n_ok, se_ok = summarize([1.0, 2.0, np.nan, 4.0], 2.0)
    assert (mean, n_ok, se_ok) == (pytest.approx(7 / 3), 3, True)
    assert rmse**2 == pytest.approx(bias**2 + se**2, rel=1e-15)
    assert se == pytest.approx(np.std([1, 2, 4], ddof=1))
    mean, bias, se, rmse, n_ok, se_ok = summarize([3.5], 3.0)
    assert (bias, se, rmse, se_ok) == (0.5, 0.0, 0.5, False)
    assert math.isnan(summarize([np.nan], 1.0)[0])


def small_config(**kw):
    base = dict(N=400, n=200, R=3, master_seed=5)
    base.update(kw)
    return SimConfig(**base)


def test_single_replication_edge():
    table = monte_carlo(small_config(R=1, estimators=("Naive",)))
    row = table.get("Naive", "y1", "mean")
    assert row.se == 0.0 and not row.se_defined
    assert row.bias == pytest.approx(row.mean_estimate - row.truth)


def test_duplicate_estimator_rows_match():
    table = monte_carlo(small_config(estimators=("CAL", "CAL")))
    assert len(table.rows) == 2 * 3 * 4
    first, second = table.rows[:12], table.rows[12:]
    assert first == second


def test_table_shape_and_rmse_identity():
    table = monte_carlo(small_config(estimators=ESTIMATORS))
    assert len(table.rows) == 8 * 3 * 4
    for row in table.rows:
        assert row.rmse**2 == pytest.approx(row.bias**2 + row.se**2, rel=1e-12)
        assert row.n_valid + row.n_missing == 3
    md = table.to_markdown()
    assert md.count("### ") == 4
    assert all(md.count(f"| {e} |") == 4 for e in ESTIMATORS)
    csv_lines = table.to_csv().splitlines()
    assert len(csv_lines) == 1 + 96
    assert csv_lines[0].startswith("estimator,variable,rho,parameter")


def test_oracle_ipw_mean_is_unbiased():
    cfg = SimConfig(N=2000, n=1000, R=500, master_seed=8, estimators=(ORACLE,), parameters=("mean",))
    table = monte_carlo(cfg)
    for row in table.rows:
        assert abs(row.bias) < 3 * row.se / math.sqrt(cfg.R)


def test_config_round_trip_and_validation():
    cfg = SimConfig.from_dict({"N": 100, "n": 50, "R": 2, "distance": {"kind": "logit", "L": 0.5, "U": 2}})
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    for bad in ({"n": 0}, {"rho_list": [1.2]}, {"R": 0}, {"estimators": ["GREG"]},
                {"parameters": ["Q90"]}, {"bogus": 1}, {"distance": {"kind": "raking", "C": 1}}):
        with pytest.raises(ValueError):
            SimConfig.from_dict(bad)
