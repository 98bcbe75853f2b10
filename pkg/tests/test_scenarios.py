import math

import numpy as np
import pytest
from scipy import stats

from cqht.filters import NumericalFault
from cqht.likelihood import bayes_threshold
from cqht.scenarios import (
    RunResult,
    ScenarioConfig,
    TrialOutcome,
    chernoff_scan,
    hybrid_kalman_comparison,
    monte_carlo,
    run_force_detection,
    run_photon_counting,
    run_quadrature_equivalence,
    wilson_interval,
)


def toy_runner(cfg, trial):
    rng = np.random.default_rng([cfg.seed, trial])
    if trial == 2:
        raise NumericalFault("synthetic fault")
    return TrialOutcome(np.cumsum(rng.normal(size=len(cfg.checkpoints))), clamps=trial % 2)


def test_scenario_defaults():
    f = ScenarioConfig("force-detect", omega=2.0)
    assert f.dt == pytest.approx(1e-3 * math.pi) and f.T == 20.0
    q = ScenarioConfig("quadrature-equiv", gamma=2.0)
    assert q.dt == pytest.approx(5e-3) and q.T == pytest.approx(2.5)
    p = ScenarioConfig("photon-count", kappa=4.0)
    assert p.dt == pytest.approx(2.5e-4) and p.T == pytest.approx(5.0)
    assert ScenarioConfig(S=0.5).R == pytest.approx(1.5)


@pytest.mark.parametrize(
    "kw,msg",
    [
        ({"eta": 1.5}, "eta must lie in (0,1], got 1.5"),
        ({"scenario": "nope"}, "scenario must be one of"),
        ({"R": 3.0}, "R must equal Q+S"),
        ({"T": 1.0, "T_grid": (2.0,)}, "T_grid must lie in"),
        ({"A": 0.1}, "A must be negative"),
        ({"truth": "H2"}, "truth must be H0 or H1"),
        ({"theta": "sideways"}, "theta must be a number"),
        ({"dt": -1.0}, "dt must be positive"),
    ],
)
def test_config_validation_messages(kw, msg):
    with pytest.raises(ValueError) as err:
        ScenarioConfig(**kw)
    assert msg in str(err.value)


def test_config_replace_and_checkpoints():
    cfg = ScenarioConfig(T=4.0, T_grid=(3, 1))
    assert cfg.checkpoints == (1.0, 3.0, 4.0)
    new = cfg.replace(truth="H0")
    assert new.truth == "H0" and cfg.truth == "H1"
    with pytest.raises(ValueError):
        cfg.replace(P1=1.0)


def test_decision_thresholds():
    cfg = ScenarioConfig(rule="bayes", P1=0.25, cost_a=2.0, cost_b=3.0)
    assert cfg.decision_threshold() == pytest.approx(bayes_threshold(2.0, 3.0, 0.75, 0.25))
    assert ScenarioConfig(threshold=2.5).decision_threshold() == 2.5
    with pytest.raises(ValueError):
        ScenarioConfig(rule="neyman-pearson").decision_threshold()


@pytest.mark.parametrize("k,n", [(0, 10), (3, 10), (10, 10), (37, 200)])
def test_wilson_interval_closed_form(k, n):
    z = stats.norm.ppf(0.975)
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    lo, hi = wilson_interval(k, n)
    assert lo == pytest.approx(max(0.0, centre - half), abs=1e-12)
    assert hi == pytest.approx(min(1.0, centre + half), abs=1e-12)
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_monte_carlo_quarantines_and_is_worker_independent(monkeypatch):
    monkeypatch.delenv("CQHT_WORKERS", raising=False)
    cfg = ScenarioConfig(n_trials=6, T=1.0, T_grid=(0.5,), dt=0.1)
    serial = monte_carlo(cfg, toy_runner)
    parallel = monte_carlo(cfg.replace(workers=3), toy_runner)
    assert np.array_equal(serial.log_lambda_t, parallel.log_lambda_t, equal_nan=True)
    assert list(serial.failures) == [2] and "synthetic fault" in serial.failures[2]
    assert np.isnan(serial.log_lambda[2]) and serial.valid.sum() == 5
    assert serial.decisions[2] == "--"
    assert serial.diagnostics["positivity_clamps"] == 3
    assert serial.diagnostics["quarantined"] == 1
    monkeypatch.setenv("CQHT_WORKERS", "2")
    env = monte_carlo(cfg, toy_runner)
    assert np.array_equal(serial.log_lambda_t, env.log_lambda_t, equal_nan=True)
    monkeypatch.setenv("CQHT_WORKERS", "zero")
    with pytest.raises(ValueError):
        monte_carlo(cfg, toy_runner)


def test_error_rates_and_moments():
    ll = np.array([[-1.0, -2.0], [0.5, 1.0], [0.2, -0.1], [np.nan, np.nan]])
    res = RunResult("force-detect", {"truth": "H0"}, np.array([1.0, 2.0]), ll, 1.0, np.array([]))
    rows = res.error_rates()
    assert [r["errors"] for r in rows] == [2, 1]
    assert all(r["n"] == 3 for r in rows)
    assert rows[1]["low"] <= rows[1]["rate"] <= rows[1]["high"]
    m, se = res.lambda_moment(1.0)
    assert m == pytest.approx(np.mean(np.exp([-2.0, 1.0, -0.1])))
    s = res.summary()
    assert s["n_valid"] == 3 and s["n_trials"] == 4
    h1 = RunResult("force-detect", {"truth": "H1"}, np.array([1.0, 2.0]), ll, 1.0, np.array([]))
    assert [r["errors"] for r in h1.error_rates()] == [1, 2]


def test_force_detection_small_run():
    cfg = ScenarioConfig("force-detect", n_trials=200, T=5.0, T_grid=(2.5,), dt=0.01, seed=3, keep_trajectory=True)
    res = run_force_detection(cfg)
    again = run_force_detection(cfg)
    assert np.array_equal(res.log_lambda_t, again.log_lambda_t)
    # mean log LR under H1 is the relative entropy, hence positive and growing
    mean = res.log_lambda_t.mean(axis=0)
    assert 0 < mean[0] < mean[1]
    assert len(res.chernoff) == 2
    for row, rates in zip(res.chernoff, res.error_rates()):
        assert rates["low"] <= row["bound_P01"]
    assert res.trajectory["t"].size == 50
    h0 = run_force_detection(cfg.replace(truth="H0"), chernoff=False)
    assert h0.log_lambda.mean() < 0


def test_force_detection_neyman_pearson_size():
    cfg = ScenarioConfig("force-detect", n_trials=400, T=2.0, dt=0.01, truth="H0", rule="neyman-pearson", np_size=0.1)
    res = run_force_detection(cfg, chernoff=False)
    assert np.mean(res.decisions == "H1") <= 0.1
    with pytest.raises(ValueError):
        run_force_detection(cfg.replace(truth="H1"), chernoff=False)


def test_photon_counting_alpha_invariance_and_direction():
    cfg = ScenarioConfig("photon-count", n_trials=50, T=3.0, dt=2e-3)
    a = run_photon_counting(cfg, alpha=0.3)
    b = run_photon_counting(cfg, alpha=7.0)
    assert np.abs(a.log_lambda_t - b.log_lambda_t).max() < 1e-9
    assert a.log_lambda.mean() > 0
    assert run_photon_counting(cfg.replace(truth="H0")).log_lambda.mean() < 0


@pytest.mark.filterwarnings("ignore:clamping", "ignore:grid cell")
def test_quadrature_scenario_small_run():
    cfg = ScenarioConfig("quadrature-equiv", n_trials=2, T=0.3, dim=20, grid_cells=16, keep_trajectory=True, thin=5)
    res = run_quadrature_equivalence(cfg)
    assert res.valid.all()
    assert np.abs(res.log_lambda).max() < 0.05
    assert len(res.extra["per_trial"]) == 2
    assert res.trajectory["t"].size == 6


@pytest.mark.filterwarnings("ignore:grid cell")
def test_hybrid_rejects_short_horizon():
    with pytest.raises(ValueError, match="time constants"):
        hybrid_kalman_comparison(ScenarioConfig(T=0.05, dt=0.01, hybrid_dim=10, hybrid_cells=4))


def test_chernoff_scan_endpoints():
    s, mu, b10, b01 = chernoff_scan(ScenarioConfig(T=2.0, dt=0.01), n_s=5)
    assert s[0] == 0 and s[-1] == 1
    assert abs(mu[0]) < 1e-12 and abs(mu[-1]) < 1e-12
    assert np.all(mu <= 1e-12)
    assert np.all((b10 <= 1) & (b01 <= 1))
