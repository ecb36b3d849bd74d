"""Calibration of sensitivity-parameter magnitudes from observed data.

The idea: the unobserved confounder behind a tilt gamma can explain at most
as much latent variation in its selection/completion indicator as the
strongest observed covariate does. For each indicator (trial selection S,
completion R within either arm) we compute per-covariate partial variances
on the latent-logistic scale,

    rho2_j = max(0, [var m_full - var m_reduced(-j)] / [var m_full + pi^2/3]),

transform the largest one, and invert the variance-explained map to a
gamma magnitude:

    rho_star_sq = max_j rho2_j / (1 - max_j rho2_j)
    |gamma*| = (1/sigma_Y) sqrt( rho_star_sq/(1-rho_star_sq)
                                 * (var m + pi^2/3) )

sigma_Y^2 is the mean conditional outcome variance under the fitted mixture
for the relevant arm; var m is the empirical variance of the indicator's
full-model linear predictor over its fitting stratum.
"""
from __future__ import annotations

import warnings as _warnings
from dataclasses import dataclass

import numpy as np

from ._rng import seed_sequence
from .data import Dataset
from .exceptions import CalibrationError, FitError
from .nuisance import (LogisticConfig, MixtureConfig, NuisanceSet,
                       fit_logistic, select_mixture)

INDICATORS = ("S", "R_in_S1", "R_in_S0")
LATENT_RESIDUAL_VAR = np.pi ** 2 / 3.0

# indicator -> (gamma it bounds, outcome arm for sigma_Y^2)
_INDICATOR_INFO = {
    "S": ("gamma_s", 0),
    "R_in_S1": ("gamma_r1", 1),
    "R_in_S0": ("gamma_r0", 0),
}


def _indicator_rows(ds: Dataset, indicator: str):
    if indicator == "S":
        mask = np.ones(ds.n, dtype=bool)
        labels = ds.s.astype(np.float64)
    elif indicator == "R_in_S1":
        mask = ds.s == 1
        labels = ds.r[mask].astype(np.float64)
    elif indicator == "R_in_S0":
        mask = ds.s == 0
        labels = ds.r[mask].astype(np.float64)
    else:
        raise CalibrationError(
            f"unknown indicator {indicator!r}; one of {INDICATORS}")
    return ds.x[mask], labels


def _linpred_var(features, labels, config) -> float:
    if features.shape[1] == 0:
        return 0.0
    model = fit_logistic(features, labels, config)
    return float(np.var(model.linear_predictor(features)))


def partial_rho2(ds: Dataset, indicator: str, j: int,
                 config: LogisticConfig | None = None) -> float:
    """Latent-scale partial variance explained by covariate j for an indicator."""
    config = config or LogisticConfig()
    x, labels = _indicator_rows(ds, indicator)
    if not (0 <= j < x.shape[1]):
        raise CalibrationError(f"covariate index {j} out of range for p={x.shape[1]}")
    if np.var(x[:, j]) == 0.0:
        _warnings.warn(
            f"covariate {j} is constant within the {indicator} stratum; "
            "its partial variance is 0", stacklevel=2)
        return 0.0
    v_full = _linpred_var(x, labels, config)
    v_red = _linpred_var(np.delete(x, j, axis=1), labels, config)
    return max(0.0, (v_full - v_red) / (v_full + LATENT_RESIDUAL_VAR))


def rho_star(per_covariate_rho2) -> float:
    """(rho*)^2 = m/(1-m) with m the largest per-covariate partial variance."""
    vec = np.asarray(per_covariate_rho2, dtype=np.float64)
    if vec.size == 0:
        raise CalibrationError("per-covariate vector is empty")
    if np.any(vec < 0.0) or np.any(vec >= 1.0):
        raise CalibrationError(
            f"per-covariate partial variances must lie in [0, 1), got {vec}")
    m = float(np.max(vec))
    return m / (1.0 - m)


def calibrate_gamma(rho_star_sq: float, sigma_y_sq: float, var_ms: float) -> float:
    """|gamma*| implied by a variance-explained bound (rho*)^2."""
    if not (0.0 <= rho_star_sq < 1.0):
        raise CalibrationError(
            f"rho_star_sq must lie in [0, 1), got {rho_star_sq}")
    if sigma_y_sq <= 0.0:
        raise CalibrationError(f"sigma_y_sq must be > 0, got {sigma_y_sq}")
    if var_ms < 0.0:
        raise CalibrationError(f"var_ms must be >= 0, got {var_ms}")
    scale = rho_star_sq / (1.0 - rho_star_sq)
    return float(np.sqrt(scale * (var_ms + LATENT_RESIDUAL_VAR) / sigma_y_sq))


def implied_rho2(gamma: float, sigma_y_sq: float, var_ms: float) -> float:
    """Forward map: variance of the outcome term in the latent indicator model."""
    t = sigma_y_sq * gamma * gamma
    return t / (var_ms + LATENT_RESIDUAL_VAR + t)


@dataclass
class CalibrationReport:
    """Calibration block for one indicator."""

    indicator: str
    gamma_name: str
    per_covariate_rho2: np.ndarray
    rho_star_sq: float
    sigma_y_sq: float
    var_ms: float
    gamma_star_abs: float
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        self.per_covariate_rho2 = np.asarray(self.per_covariate_rho2,
                                             dtype=np.float64)
        if not (0.0 <= self.rho_star_sq):
            raise CalibrationError(f"rho_star_sq invalid: {self.rho_star_sq}")
        if self.sigma_y_sq <= 0.0:
            raise CalibrationError(f"sigma_y_sq must be > 0: {self.sigma_y_sq}")
        if not np.isfinite(self.gamma_star_abs) or self.gamma_star_abs < 0:
            raise CalibrationError(f"gamma_star_abs invalid: {self.gamma_star_abs}")

    def to_json_dict(self) -> dict:
        return {
            "indicator": self.indicator,
            "gamma_name": self.gamma_name,
            "per_covariate_rho2": self.per_covariate_rho2.tolist(),
            "rho_star_sq": self.rho_star_sq,
            "sigma_y_sq": self.sigma_y_sq,
            "var_ms": self.var_ms,
            "gamma_star_abs": self.gamma_star_abs,
            "warnings": list(self.warnings),
        }


def calibrate_indicator(ds: Dataset, indicator: str,
                        nu: NuisanceSet | None = None,
                        logistic_config: LogisticConfig | None = None,
                        mixture_config: MixtureConfig | None = None,
                        k_grid=(1, 2, 3), seed=0) -> CalibrationReport:
    """Full calibration for one indicator.

    Logistic benchmarks are fit on the raw covariates. sigma_Y^2 comes from
    the outcome mixture of the arm the indicator's tilt acts on (reused from
    nu when given, otherwise fit here).
    """
    logistic_config = logistic_config or LogisticConfig()
    if indicator not in _INDICATOR_INFO:
        raise CalibrationError(
            f"unknown indicator {indicator!r}; one of {INDICATORS}")
    gamma_name, arm = _INDICATOR_INFO[indicator]

    x, labels = _indicator_rows(ds, indicator)
    if np.unique(labels).size < 2:
        raise CalibrationError(
            f"indicator {indicator}: labels are constant in its stratum")
    notes = []
    v_full = _linpred_var(x, labels, logistic_config)
    rho2 = np.zeros(ds.p)
    for j in range(ds.p):
        if np.var(x[:, j]) == 0.0:
            notes.append(f"covariate {j} constant in stratum; rho2 set to 0")
            continue
        v_red = _linpred_var(np.delete(x, j, axis=1), labels, logistic_config)
        rho2[j] = max(0.0, (v_full - v_red) / (v_full + LATENT_RESIDUAL_VAR))

    obs = (ds.s == arm) & (ds.r == 1)
    if not obs.any():
        raise CalibrationError(
            f"indicator {indicator}: no observed outcomes in arm s={arm}")
    x_obs = ds.x[obs]
    if nu is not None:
        model = nu.outcome_model(arm)
        feats = nu.om_feature_matrix(x_obs)
    else:
        y_obs = ds.y[obs]
        model = select_mixture(x_obs, y_obs, k_grid, mixture_config,
                               seed=seed_sequence(seed, "calib", arm))
        feats = x_obs
    sigma_y_sq = float(np.mean(model.conditional_variance(feats)))

    rho_star_sq = rho_star(rho2)
    gamma_star = calibrate_gamma(rho_star_sq, sigma_y_sq, v_full)
    return CalibrationReport(
        indicator=indicator, gamma_name=gamma_name, per_covariate_rho2=rho2,
        rho_star_sq=rho_star_sq, sigma_y_sq=sigma_y_sq, var_ms=v_full,
        gamma_star_abs=gamma_star, warnings=tuple(notes))


def calibrate_all(ds: Dataset, nu: NuisanceSet | None = None,
                  logistic_config: LogisticConfig | None = None,
                  mixture_config: MixtureConfig | None = None,
                  k_grid=(1, 2, 3), seed=0) -> dict[str, CalibrationReport]:
    """Reports for all three indicators, keyed by indicator name."""
    out = {}
    for ind in INDICATORS:
        try:
            out[ind] = calibrate_indicator(ds, ind, nu, logistic_config,
                                           mixture_config, k_grid, seed)
        except (CalibrationError, FitError) as exc:
            raise CalibrationError(f"indicator {ind}: {exc}") from None
    return out


def report_table(reports: dict[str, CalibrationReport]) -> str:
    lines = [f"{'indicator':<10} {'bounds':<9} {'max rho2_j':>10} "
             f"{'(rho*)^2':>9} {'sigma_y^2':>10} {'var_m':>8} {'|gamma*|':>9}"]
    for ind in INDICATORS:
        if ind not in reports:
            continue
        r = reports[ind]
        m = float(np.max(r.per_covariate_rho2)) if r.per_covariate_rho2.size else 0.0
        lines.append(
            f"{r.indicator:<10} {r.gamma_name:<9} {m:>10.4f} "
            f"{r.rho_star_sq:>9.4f} {r.sigma_y_sq:>10.4f} {r.var_ms:>8.4f} "
            f"{r.gamma_star_abs:>9.4f}")
    return "\n".join(lines)
