"""Synthetic data generator, oracle, and Monte Carlo harness."""
import csv

import numpy as np
import pytest

import ectsens.simulation as sim
from ectsens.estimators import SensitivitySpec
from ectsens.exceptions import ConfigError, SimulationError
from ectsens.nuisance import NuisanceConfig
from ectsens.simulation import (DGPConfig, MCScenario, MCTable, generate,
                                run_mc_study, scenario_from_mapping,
                                solve_intercept, true_tau, z_transform)
from ectsens.tilting import GammaTriple

# root of t^2 + 2 sin t - 1.5, where the bent basis crosses zero
BEND_ROOT = 0.60375663239701076
# E{(X^2 + 2 sin X - 3/2)/sqrt 2} for X ~ N(0.25, 1):
# E X^2 = 1.0625, E sin X = exp(-1/2) sin(1/4)
BENT_MEAN = -0.097145035524294544


def test_bent_basis_root_and_passthrough():
    row = np.array([[BEND_ROOT] * 4 + [0.0]])
    assert np.max(np.abs(z_transform(row))) <= 1e-10
    row[0, 4] = 1.0
    assert z_transform(row)[0, 4] == 1.0


def test_z_transform_needs_five_columns():
    with pytest.raises(ConfigError, match="expects 5 covariates"):
        z_transform(np.zeros((3, 4)))


def test_bent_mean_matches_analytic_value():
    rng = np.random.default_rng(77)
    x = rng.normal(0.25, 1.0, size=400_000)
    z = (x ** 2 + 2.0 * np.sin(x) - 1.5) / np.sqrt(2.0)
    se = z.std(ddof=1) / np.sqrt(z.size)
    assert abs(z.mean() - BENT_MEAN) <= 3.0 * se


def test_solve_intercept():
    lp = np.zeros(1000)
    assert solve_intercept(0.5, lp) == pytest.approx(0.0, abs=1e-6)
    # with no covariate signal the intercept is the logit of the target
    assert solve_intercept(2.0 / 7.0, lp) == pytest.approx(
        -0.91629073187415507, abs=1e-6)
    with pytest.raises(ConfigError, match="target rate"):
        solve_intercept(0.0, lp)
    with pytest.raises(SimulationError, match="no units"):
        solve_intercept(0.5, np.array([]))
    with pytest.raises(SimulationError, match="bracket"):
        solve_intercept(0.5, np.full(50, -100.0))


def test_dgp_config_validation():
    assert DGPConfig().sat_fraction == pytest.approx(2.0 / 7.0)
    with pytest.raises(ConfigError, match="gamma_r1 = 0"):
        DGPConfig(j2r_variant=True, gammas=GammaTriple(0.0, 0.0, 0.2))
    with pytest.raises(ConfigError, match="oracle_draws"):
        DGPConfig(oracle_draws=10_000)
    with pytest.raises(ConfigError, match="positive"):
        DGPConfig(n_sat_target=0)


def test_generate_is_reproducible():
    cfg = DGPConfig(n_sat_target=100, n_ec_target=200)
    a, _ = generate(cfg, seed=11)
    b, _ = generate(cfg, seed=11)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.s, b.s)
    np.testing.assert_array_equal(a.r, b.r)
    np.testing.assert_array_equal(a.y, b.y)
    c, _ = generate(cfg, seed=12)
    assert not np.array_equal(a.x, c.x)


def test_generate_structure():
    cfg = DGPConfig(n_sat_target=150, n_ec_target=300)
    ds, lat = generate(cfg, seed=6)
    assert ds.n == 450 and ds.p == 5
    # one shared noise draw: the unit-level effect is the bent sum over 6
    np.testing.assert_allclose(lat["y1"] - lat["y0"], lat["zsum"] / 6.0,
                               atol=1e-12)
    assert lat["y1_post"] is None
    sat = ds.s == 1
    obs = ds.r == 1
    np.testing.assert_array_equal(np.isnan(ds.y), ~obs)
    np.testing.assert_array_equal(ds.y[sat & obs], lat["y1"][sat & obs])
    np.testing.assert_array_equal(ds.y[~sat & obs], lat["y0"][~sat & obs])
    ds2, lat2 = generate(DGPConfig(n_sat_target=150, n_ec_target=300,
                                   j2r_variant=True), seed=6)
    np.testing.assert_array_equal(lat2["y1_post"], lat2["y0"])


def test_generate_hits_rate_targets():
    cfg = DGPConfig(n_sat_target=30_000, n_ec_target=70_000)
    ds, _ = generate(cfg, seed=3)
    sat = ds.s == 1
    assert abs(sat.mean() - 0.3) <= 0.01
    assert 0.48 <= ds.r[sat].mean() <= 0.52
    assert 0.48 <= ds.r[~sat].mean() <= 0.52


def test_informative_completion_depresses_high_outcomes():
    cfg = DGPConfig(n_sat_target=30_000, n_ec_target=70_000,
                    gammas=GammaTriple(0.0, 0.0, 0.8))
    ds, lat = generate(cfg, seed=3)
    sat = ds.s == 1
    corr = np.corrcoef(lat["y1"][sat], ds.r[sat])[0, 1]
    assert corr < -0.2


def test_flat_covariates_give_zero_effect(monkeypatch):
    # all structural signal flows through the bent sum, so pinning every
    # covariate at the bend root removes the treatment effect entirely
    def flat_draw(n, rng):
        out = np.full((n, 5), BEND_ROOT)
        out[:, 4] = 0.0
        return out

    monkeypatch.setattr(sim, "draw_covariates", flat_draw)
    tau, mc_se = true_tau(DGPConfig(), draws=100_000, seed=2)
    assert abs(tau) <= 1e-9
    assert mc_se <= 1e-9


def test_true_tau_reproducible_and_sane():
    tau, mc_se = true_tau(DGPConfig(), draws=200_000, seed=1)
    tau2, _ = true_tau(DGPConfig(), draws=200_000, seed=1)
    assert tau == tau2
    assert 0.10 <= tau <= 0.16
    assert mc_se < 0.01
    tau_j2r, _ = true_tau(DGPConfig(j2r_variant=True), draws=200_000, seed=1)
    assert 0.08 <= tau_j2r <= 0.18
    with pytest.raises(ConfigError, match="at least 1e5"):
        true_tau(DGPConfig(), draws=1000)


def test_scenario_validation():
    with pytest.raises(ConfigError, match="at least one estimator"):
        MCScenario(dgp=DGPConfig(), estimators=())
    with pytest.raises(ConfigError, match="n_boot"):
        MCScenario(dgp=DGPConfig(), n_boot=-1)
    with pytest.raises(ConfigError, match="alpha"):
        MCScenario(dgp=DGPConfig(), alpha=0.0)


@pytest.fixture(scope="module")
def smoke_scenario():
    return MCScenario(
        dgp=DGPConfig(n_sat_target=80, n_ec_target=160, oracle_draws=100_000),
        nuisance=NuisanceConfig(k_grid=(1,)),
        estimators=(SensitivitySpec("primary"), SensitivitySpec("om")),
        n_boot=3, label="smoke")


def test_run_mc_study_smoke(smoke_scenario):
    table = run_mc_study(smoke_scenario, 3, seed=4)
    assert len(table.rows) == 2
    for row in table.rows:
        assert set(MCTable.FIELDS) <= set(row)
        assert row["n_reps"] == 3 and row["n_failed"] == 0
        assert row["mse"] >= row["bias"] ** 2 - 1e-12
        assert 0.0 <= row["coverage"] <= 1.0
        assert row["ci_width"] > 0.0
        assert row["label"] == "smoke"
    text = table.table()
    assert "primary" in text and "om" in text
    with pytest.raises(ConfigError, match="n_reps"):
        run_mc_study(smoke_scenario, 1, seed=4)


def test_run_mc_study_deterministic_and_thread_invariant(smoke_scenario):
    a = run_mc_study(smoke_scenario, 3, seed=4)
    b = run_mc_study(smoke_scenario, 3, seed=4)
    assert a.rows == b.rows
    c = run_mc_study(smoke_scenario, 3, seed=4, threads=2)
    assert a.rows == c.rows


def test_mc_table_csv_round_trip(smoke_scenario, tmp_path):
    table = run_mc_study(smoke_scenario, 2, seed=9)
    path = tmp_path / "mc.csv"
    table.to_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert rows[0]["method"] == "primary"
    assert float(rows[0]["truth"]) == pytest.approx(table.rows[0]["truth"])


def test_mc_table_validation():
    base = {"mse": 0.0, "bias": 1.0, "coverage": 0.5}
    with pytest.raises(SimulationError, match="squared bias"):
        MCTable([dict(base)])
    with pytest.raises(SimulationError, match="coverage"):
        MCTable([{"mse": 2.0, "bias": 1.0, "coverage": 1.5}])


def test_scenario_from_mapping_round_trip():
    scen = scenario_from_mapping({
        "n_sat": 80, "n_ec": 160, "dgp_gamma_s": 0.1, "j2r_variant": "false",
        "oracle_draws": 100_000, "dgp_seed": 7, "ps_features": "sqsin",
        "om_features": "sqsin", "k_grid": "1,2", "standardize": "true",
        "estimators": ["primary", "tilting@0.1,0.1,0.1"], "n_boot": 9,
        "alpha": 0.1, "label": "cell",
    })
    assert scen.dgp.n_sat_target == 80
    assert scen.dgp.gammas == GammaTriple(0.1, 0.0, 0.0)
    assert scen.dgp.seed == 7
    assert scen.nuisance.k_grid == (1, 2)
    assert scen.nuisance.standardize is True
    assert scen.estimators[1] == SensitivitySpec(
        "tilting", GammaTriple(0.1, 0.1, 0.1))
    assert scen.n_boot == 9 and scen.alpha == 0.1 and scen.label == "cell"


def test_scenario_from_mapping_semicolon_estimator_list():
    # string values come from flat config files; semicolons let an estimator
    # spec keep its own commas
    scen = scenario_from_mapping(
        {"estimators": "primary; tilting@0.1,0.2,0", "n_boot": 0})
    assert scen.estimators == (
        SensitivitySpec("primary"),
        SensitivitySpec("tilting", GammaTriple(0.1, 0.2, 0.0)))


def test_scenario_from_mapping_rejects_junk():
    with pytest.raises(ConfigError, match="unknown scenario keys"):
        scenario_from_mapping({"bogus": 1})
    with pytest.raises(ConfigError, match="boolean"):
        scenario_from_mapping({"j2r_variant": "maybe"})
