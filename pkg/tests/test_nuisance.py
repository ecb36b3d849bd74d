"""Propensity and mixture-of-regressions nuisance fitting."""
import numpy as np
import pytest
from scipy.special import expit

from ectsens.data import Dataset
from ectsens.exceptions import ConfigError, FitError
from ectsens.nuisance import (LogisticModel, MixtureConfig,
                              MixtureOutcomeModel, NuisanceConfig,
                              NuisanceSet, fit_logistic, fit_mixture,
                              fit_nuisances, missingness_odds, select_mixture,
                              selection_odds)
from ectsens.simulation import DGPConfig, generate


def _labels(rng, lp):
    return (rng.random(lp.size) < expit(lp)).astype(np.float64)


# ---------------------------------------------------------------------------
# logistic propensities


def test_fit_logistic_validation():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 2))
    with pytest.raises(FitError, match="binary"):
        fit_logistic(x, np.full(50, 0.5))
    with pytest.raises(FitError, match="labels are all 1"):
        fit_logistic(x, np.ones(50))
    with pytest.raises(FitError, match="need at least"):
        fit_logistic(np.zeros((3, 2)), np.array([0.0, 1.0, 0.0]))
    with pytest.raises(FitError, match="shape"):
        fit_logistic(x, np.ones(49))


def test_fit_logistic_separation_flagged():
    # classes split by a wide margin around zero: the penalized optimum
    # drives every fitted probability within 1e-3 of its label
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.uniform(-2.0, -0.8, 30),
                        rng.uniform(0.8, 2.0, 30)])[:, None]
    labels = (x[:, 0] > 0).astype(np.float64)
    model = fit_logistic(x, labels)
    assert model.warning == "separation"
    assert not model.converged


def test_predict_clips_to_bounds():
    model = LogisticModel(coef=np.array([0.0, 50.0]))
    probs = model.predict(np.array([[-1.0], [0.0], [1.0]]))
    np.testing.assert_allclose(probs, [0.01, 0.5, 0.99])
    # hand-built models may keep hi = 1 (probability-one completion), but
    # lo = 0 is never legal: selection odds divide by 1 - pi
    wide = LogisticModel(coef=np.array([0.0, 50.0]), clip=(0.01, 1.0))
    assert wide.predict(np.array([[1.0]]))[0] == 1.0
    with pytest.raises(ConfigError, match="clip"):
        LogisticModel(coef=np.array([0.0, 50.0]), clip=(0.0, 1.0))


def test_linear_predictor_feature_count_checked():
    model = LogisticModel(coef=np.array([0.5, 1.0, -1.0]))
    with pytest.raises(ConfigError, match="expected 2 features"):
        model.linear_predictor(np.zeros((3, 1)))


def test_odds_transforms():
    assert selection_odds(0.75) == pytest.approx(3.0)
    assert missingness_odds(0.8) == pytest.approx(0.25)
    np.testing.assert_allclose(selection_odds(np.array([0.5, 0.2])),
                               [1.0, 0.25])


# ---------------------------------------------------------------------------
# outcome mixtures


def test_mixture_model_validation():
    one = np.array([1.0])
    with pytest.raises(ConfigError, match="sum to 1"):
        MixtureOutcomeModel(weights=np.array([0.6, 0.6]),
                            betas=np.zeros((2, 2)), sigmas=np.ones(2))
    with pytest.raises(ConfigError, match="shapes disagree"):
        MixtureOutcomeModel(weights=one, betas=np.zeros((2, 2)),
                            sigmas=np.ones(1))
    with pytest.raises(ConfigError, match="sigmas"):
        MixtureOutcomeModel(weights=one, betas=np.zeros((1, 2)),
                            sigmas=np.array([-1.0]))


def test_mixture_moments_closed_form():
    # two components at 1+x and -1-x, unit weights halves, sigmas 0.5 / 1.5
    model = MixtureOutcomeModel(weights=np.array([0.5, 0.5]),
                                betas=np.array([[1.0, 1.0], [-1.0, -1.0]]),
                                sigmas=np.array([0.5, 1.5]))
    feats = np.array([[2.0]])
    mu = model.component_means(feats)
    np.testing.assert_allclose(mu, [[3.0, -3.0]])
    assert model.mean(feats)[0] == pytest.approx(0.0)
    # law of total variance: E[mu^2 + sigma^2] - (E mu)^2
    expected = 0.5 * (9 + 0.25) + 0.5 * (9 + 2.25) - 0.0
    assert model.conditional_variance(feats)[0] == pytest.approx(expected)


def test_fit_mixture_k1_is_least_squares():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(300, 1))
    y = 0.7 - 1.2 * x[:, 0] + 0.3 * rng.normal(size=300)
    model = fit_mixture(x, y, k=1)
    design = np.column_stack([np.ones(300), x])
    beta_ls, *_ = np.linalg.lstsq(design, y, rcond=None)
    np.testing.assert_allclose(model.betas[0], beta_ls, atol=1e-8)
    rss = float(np.sum((y - design @ beta_ls) ** 2))
    assert model.sigmas[0] == pytest.approx(np.sqrt(rss / 300), abs=1e-10)
    assert model.k == 1 and model.converged


def test_fit_mixture_recovers_two_components():
    # equal mixture of y = x + e and y = -x + e with sd 0.5
    rng = np.random.default_rng(77)
    n = 5000
    x = rng.normal(size=(n, 1))
    comp = rng.random(n) < 0.5
    slope = np.where(comp, 1.0, -1.0)
    y = slope * x[:, 0] + 0.5 * rng.normal(size=n)
    model = fit_mixture(x, y, k=2, seed=3)
    order = np.argsort(model.betas[:, 1])
    slopes = model.betas[order, 1]
    assert abs(slopes[0] + 1.0) <= 0.1 and abs(slopes[1] - 1.0) <= 0.1
    np.testing.assert_allclose(model.weights, [0.5, 0.5], atol=0.05)
    np.testing.assert_allclose(model.sigmas, [0.5, 0.5], atol=0.1)


def test_fit_mixture_sample_size_floor():
    with pytest.raises(FitError, match="insufficient data"):
        fit_mixture(np.zeros((5, 1)), np.zeros(5), k=2)


def test_select_mixture_prefers_one_component_on_linear_data():
    hits = 0
    for rep in range(25):
        rng = np.random.default_rng(1000 + rep)
        x = rng.normal(size=(2000, 1))
        y = 0.5 + x[:, 0] + rng.normal(size=2000)
        model = select_mixture(x, y, k_grid=(1, 2, 3), seed=rep)
        hits += model.k == 1
    assert hits >= 23  # >= 90%


def test_select_mixture_prefers_two_components_on_bimodal_data():
    hits = 0
    for rep in range(25):
        rng = np.random.default_rng(2000 + rep)
        n = 2000
        x = rng.normal(size=(n, 1))
        comp = rng.random(n) < 0.5
        y = np.where(comp, 3.0 + x[:, 0], -3.0 - x[:, 0]) \
            + 0.5 * rng.normal(size=n)
        model = select_mixture(x, y, k_grid=(1, 2, 3), seed=rep)
        hits += model.k == 2
    assert hits >= 23  # >= 90%


def test_select_mixture_skips_infeasible_sizes():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(8, 1))
    y = rng.normal(size=8)
    # k=3 needs 9 rows, so only k in {1, 2} compete
    model = select_mixture(x, y, k_grid=(1, 2, 3), seed=0)
    assert model.k in (1, 2)
    with pytest.raises(FitError, match="no mixture size"):
        select_mixture(x[:3], y[:3], k_grid=(2, 3), seed=0)


def test_mixture_config_validation():
    with pytest.raises(ConfigError):
        MixtureConfig(restarts=0)
    with pytest.raises(ConfigError):
        NuisanceConfig(k_grid=(1, 1))
    with pytest.raises(ConfigError):
        NuisanceConfig(ps_features="cubic")
    with pytest.raises(ConfigError):
        NuisanceConfig(clip=(0.2, 1.0))


# ---------------------------------------------------------------------------
# full nuisance set


@pytest.fixture(scope="module")
def fitted():
    ds, _ = generate(DGPConfig(n_sat_target=150, n_ec_target=300), seed=9)
    nu = fit_nuisances(ds, NuisanceConfig(k_grid=(1,)), seed=1)
    return ds, nu


def test_fit_nuisances_populates_all_models(fitted):
    ds, nu = fitted
    assert nu.p_sat == pytest.approx(ds.n_sat / ds.n)
    np.testing.assert_array_equal(nu.binary_mask,
                                  [False, False, False, False, True])
    assert nu.warnings() == {}
    assert nu.outcome_model(1) is nu.outcome_sat
    assert nu.outcome_model(0) is nu.outcome_ec
    pi = nu.completion_prob(ds.x[:10], arm=1)
    assert np.all((pi >= 0.01) & (pi <= 0.99))


def test_fit_nuisances_rejects_degenerate_stratum():
    # every trial-arm unit completed: the trial-arm completion model has
    # constant labels and cannot be fit
    rng = np.random.default_rng(0)
    n = 60
    x = rng.normal(size=(n, 1))
    s = np.array([1] * 30 + [0] * 30)
    r = np.concatenate([np.ones(30, dtype=int),
                        rng.integers(0, 2, size=30)])
    r[30:34] = 1
    y = np.where(r == 1, rng.normal(size=n), np.nan)
    ds = Dataset(x, s, r, y)
    with pytest.raises(FitError, match="labels are all 1"):
        fit_nuisances(ds, NuisanceConfig(k_grid=(1,)))


def test_save_load_round_trip(tmp_path, fitted):
    ds, nu = fitted
    path = tmp_path / "nu.json"
    nu.save(path)
    back = NuisanceSet.load(path)
    probe = ds.x[:25]
    np.testing.assert_array_equal(back.selection_prob(probe),
                                  nu.selection_prob(probe))
    np.testing.assert_array_equal(back.completion_prob(probe, 0),
                                  nu.completion_prob(probe, 0))
    np.testing.assert_array_equal(back.outcome_mean(probe, 1),
                                  nu.outcome_mean(probe, 1))
    assert back.config == nu.config


def test_standardize_leaves_binary_columns_alone():
    ds, _ = generate(DGPConfig(n_sat_target=150, n_ec_target=300), seed=4)
    nu = fit_nuisances(ds, NuisanceConfig(k_grid=(1,), standardize=True),
                       seed=1)
    assert nu.center is not None
    assert nu.center[4] == 0.0 and nu.scale[4] == 1.0
    assert np.all(nu.scale[:4] > 0)


def test_feature_count_mismatch_raises(fitted):
    _, nu = fitted
    with pytest.raises(ConfigError, match="expected 5 covariates"):
        nu.selection_prob(np.zeros((2, 3)))
