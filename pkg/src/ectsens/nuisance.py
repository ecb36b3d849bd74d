"""Nuisance models: propensities, completion probabilities, outcome mixtures.

Five models are fit per dataset:

* selection        P(S=1 | x), logistic, fit on all units
* completion_sat   P(R=1 | x, S=1), logistic, fit on the trial arm
* completion_ec    P(R=1 | x, S=0), logistic, fit on external controls
* outcome_sat      law of Y | x, S=1, R=1, Gaussian mixture of regressions
* outcome_ec       law of Y | x, S=0, R=1, Gaussian mixture of regressions

plus the trial-arm fraction p_sat = n_sat / n. Mixture component count is
chosen by BIC over config.k_grid. Feature maps (and optional z-scoring of
continuous covariates) are recorded so predictions at new x reuse the exact
fit-time pipeline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import backend
from ._rng import rng_for, seed_sequence
from .data import Dataset
from .exceptions import ConfigError, FitError
from .features import FEATURE_MAP_NAMES, apply_feature_map, binary_column_mask

SEPARATION_RESID_TOL = 1.0e-3
_LOG_2PI = np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class LogisticConfig:
    max_iter: int = 100
    tol: float = 1.0e-8
    ridge: float = 1.0e-6

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigError("logistic max_iter must be >= 1")
        if self.tol <= 0 or self.ridge < 0:
            raise ConfigError("logistic tol must be > 0 and ridge >= 0")


@dataclass(frozen=True)
class MixtureConfig:
    restarts: int = 5
    max_iter: int = 500
    tol: float = 1.0e-6
    var_floor_rel: float = 1.0e-6
    prune_tol: float = 1.0e-6

    def __post_init__(self):
        if self.restarts < 1 or self.max_iter < 1:
            raise ConfigError("mixture restarts and max_iter must be >= 1")
        if self.tol <= 0 or self.var_floor_rel <= 0:
            raise ConfigError("mixture tol and var_floor_rel must be > 0")


def _check_clip(clip, fitted: bool) -> tuple[float, float]:
    lo, hi = float(clip[0]), float(clip[1])
    if not (0.0 < lo <= hi <= 1.0):
        raise ConfigError(f"clip must satisfy 0 < lo <= hi <= 1, got {clip}")
    if fitted and hi >= 1.0:
        raise ConfigError("fitted propensity clip must keep hi < 1")
    return lo, hi


@dataclass(frozen=True)
class NuisanceConfig:
    ps_features: str = "identity"
    om_features: str = "identity"
    k_grid: tuple[int, ...] = (1, 2, 3)
    clip: tuple[float, float] = (0.01, 0.99)
    standardize: bool = False
    logistic: LogisticConfig = field(default_factory=LogisticConfig)
    mixture: MixtureConfig = field(default_factory=MixtureConfig)

    def __post_init__(self):
        for name in (self.ps_features, self.om_features):
            if name not in FEATURE_MAP_NAMES:
                raise ConfigError(
                    f"unknown feature map {name!r}; available: {FEATURE_MAP_NAMES}")
        kg = tuple(int(k) for k in self.k_grid)
        if not kg or any(k < 1 for k in kg) or len(set(kg)) != len(kg):
            raise ConfigError(f"k_grid must be distinct positive ints, got {self.k_grid}")
        object.__setattr__(self, "k_grid", kg)
        _check_clip(self.clip, fitted=True)


# ---------------------------------------------------------------------------
# logistic model


@dataclass
class LogisticModel:
    """Ridge-penalized logistic fit; coef[0] is the intercept."""

    coef: np.ndarray
    converged: bool = True
    n_iter: int = 0
    clip: tuple[float, float] = (0.01, 0.99)
    warning: str | None = None

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=np.float64)
        if self.coef.ndim != 1 or self.coef.size < 1:
            raise ConfigError("logistic coef must be a 1-d vector")
        self.clip = _check_clip(self.clip, fitted=False)

    @property
    def p_features(self) -> int:
        return self.coef.size - 1

    def linear_predictor(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.p_features:
            raise ConfigError(
                f"expected {self.p_features} features, got {features.shape[1]}")
        return self.coef[0] + features @ self.coef[1:]

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Clipped probabilities."""
        probs = expit(self.linear_predictor(features))
        return np.clip(probs, self.clip[0], self.clip[1])


def fit_logistic(features, labels, config: LogisticConfig | None = None,
                 clip: tuple[float, float] = (0.01, 0.99)) -> LogisticModel:
    """Fit P(label=1 | features) by IRLS. Intercept is added internally.

    Labels must not be constant; a near-perfectly separated fit is returned
    at its last stabilized iterate with converged=False and warning
    "separation".
    """
    config = config or LogisticConfig()
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64)
    n, p = features.shape
    if labels.shape != (n,):
        raise FitError(f"labels must have shape ({n},), got {labels.shape}")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise FitError("labels must be binary 0/1")
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise FitError(
            f"labels are all {int(uniq[0])}; a propensity model cannot be fit")
    if n < p + 2:
        raise FitError(f"need at least {p + 2} rows to fit {p} features, got {n}")
    design = np.column_stack([np.ones(n), features])
    coef, converged, n_iter, _max_score, max_resid = backend.logistic_irls(
        design, labels, config.ridge, config.max_iter, config.tol)
    warning = None
    if max_resid < SEPARATION_RESID_TOL:
        # Labels are (near-)perfectly separated: the penalized optimum is a
        # boundary artifact, so flag it and do not report convergence.
        warning = "separation"
        converged = False
    elif not converged:
        warning = "no_convergence"
    return LogisticModel(coef=np.asarray(coef), converged=bool(converged),
                         n_iter=int(n_iter), clip=clip, warning=warning)


def selection_odds(pi_sat) -> np.ndarray:
    """q(x) = pi/(1-pi), the trial-vs-external density ratio."""
    pi_sat = np.asarray(pi_sat, dtype=np.float64)
    return pi_sat / (1.0 - pi_sat)


def missingness_odds(pi_complete) -> np.ndarray:
    """q(x) = (1-pi)/pi, the intercurrent-vs-completer density ratio."""
    pi_complete = np.asarray(pi_complete, dtype=np.float64)
    return (1.0 - pi_complete) / pi_complete


# ---------------------------------------------------------------------------
# Gaussian mixture of linear regressions


@dataclass
class MixtureOutcomeModel:
    """Y | x modeled as sum_k weights[k] * N(betas[k] . [1, x], sigmas[k]^2)."""

    weights: np.ndarray
    betas: np.ndarray
    sigmas: np.ndarray
    loglik: float = np.nan
    bic: float = np.nan
    converged: bool = True
    n_iter: int = 0
    warning: str | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.betas = np.atleast_2d(np.asarray(self.betas, dtype=np.float64))
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64)
        k = self.weights.size
        if self.betas.shape[0] != k or self.sigmas.shape != (k,):
            raise ConfigError("mixture weights/betas/sigmas shapes disagree")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-8:
            raise ConfigError("mixture weights must be positive and sum to 1")
        if np.any(self.sigmas < 0):
            raise ConfigError("mixture sigmas must be >= 0")

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def p_features(self) -> int:
        return self.betas.shape[1] - 1

    def component_means(self, features: np.ndarray) -> np.ndarray:
        """(n, K) matrix of per-component conditional means."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.p_features:
            raise ConfigError(
                f"expected {self.p_features} features, got {features.shape[1]}")
        return self.betas[:, 0][None, :] + features @ self.betas[:, 1:].T

    def mean(self, features: np.ndarray) -> np.ndarray:
        return self.component_means(features) @ self.weights

    def conditional_variance(self, features: np.ndarray) -> np.ndarray:
        """var(Y | x) by the law of total variance within the mixture."""
        mu = self.component_means(features)
        second = (mu * mu + self.sigmas[None, :] ** 2) @ self.weights
        first = mu @ self.weights
        return second - first * first


def _loglik_gaussian(y, mu, sigma2) -> float:
    return float(-0.5 * np.sum(_LOG_2PI + np.log(sigma2) + (y - mu) ** 2 / sigma2))


def _mixture_df(k: int, p1: int) -> int:
    # weights (k-1) + regression coefficients k*p1 + sigmas k
    return (k - 1) + k * p1 + k


def _bic(loglik: float, k: int, p1: int, n: int) -> float:
    return -2.0 * loglik + _mixture_df(k, p1) * np.log(n)


def _init_responsibilities(design, y, k, rng) -> np.ndarray:
    """Seed responsibilities from k-means++-style draws plus noise."""
    n = design.shape[0]
    cols = [design[:, 1:], y[:, None]]
    rows = np.column_stack(cols)
    sd = rows.std(axis=0)
    sd[sd == 0] = 1.0
    rows = (rows - rows.mean(axis=0)) / sd
    seeds = [int(rng.integers(n))]
    d2 = np.sum((rows - rows[seeds[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            seeds.append(int(rng.integers(n)))
        else:
            seeds.append(int(rng.choice(n, p=d2 / total)))
        d2 = np.minimum(d2, np.sum((rows - rows[seeds[-1]]) ** 2, axis=1))
    dist = np.stack([np.sum((rows - rows[s]) ** 2, axis=1) for s in seeds], axis=1)
    scale = np.mean(np.min(dist, axis=1)) + 1e-8
    resp = np.exp(-dist / (2.0 * scale))
    resp *= rng.uniform(0.5, 1.5, size=resp.shape)
    resp /= resp.sum(axis=1, keepdims=True)
    return resp


def fit_mixture(features, y, k: int, config: MixtureConfig | None = None,
                seed=0) -> MixtureOutcomeModel:
    """EM fit with config.restarts restarts; best log-likelihood wins.

    K=1 is the closed-form least-squares fit (sigma^2 uses denominator n).
    """
    config = config or MixtureConfig()
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, p = features.shape
    if y.shape != (n,):
        raise FitError(f"y must have shape ({n},), got {y.shape}")
    if k < 1:
        raise FitError(f"mixture needs k >= 1, got {k}")
    if n < k * (p + 2):
        raise FitError(
            f"insufficient data for {k} mixture components: need at least "
            f"{k * (p + 2)} rows for {p} features, got {n}")
    design = np.column_stack([np.ones(n), features])
    var_y = float(np.var(y))
    var_floor = max(config.var_floor_rel * var_y, 1e-12)

    if k == 1:
        beta, rss, _ = backend.weighted_linreg(design, y, np.ones(n))
        sigma2 = max(rss / n, var_floor)
        loglik = _loglik_gaussian(y, design @ np.asarray(beta), sigma2)
        return MixtureOutcomeModel(
            weights=np.array([1.0]), betas=np.asarray(beta)[None, :],
            sigmas=np.array([np.sqrt(sigma2)]), loglik=loglik,
            bic=_bic(loglik, 1, p + 1, n), converged=True, n_iter=1)

    ss = seed_sequence(seed)
    best = None
    for restart in range(config.restarts):
        rng = rng_for(ss, "mixture_restart", restart)
        resp0 = _init_responsibilities(design, y, k, rng)
        weights, betas, sigmas, loglik, n_iter, converged, monotone, n_pruned = (
            backend.em_mixture(design, y, resp0, config.max_iter, config.tol,
                               var_floor, config.prune_tol))
        if not monotone:
            raise FitError("EM log-likelihood decreased; kernel invariant broken")
        if best is None or loglik > best[0]:
            best = (loglik, weights, betas, sigmas, n_iter, converged, n_pruned)
    loglik, weights, betas, sigmas, n_iter, converged, n_pruned = best
    warning = None
    if n_pruned > 0:
        warning = "pruned_degenerate_component"
    elif not converged:
        warning = "no_convergence"
    k_eff = np.asarray(weights).size
    return MixtureOutcomeModel(
        weights=np.asarray(weights), betas=np.asarray(betas),
        sigmas=np.asarray(sigmas), loglik=float(loglik),
        bic=_bic(float(loglik), k_eff, p + 1, n), converged=bool(converged),
        n_iter=int(n_iter), warning=warning)


def select_mixture(features, y, k_grid: Sequence[int] = (1, 2, 3),
                   config: MixtureConfig | None = None, seed=0) -> MixtureOutcomeModel:
    """Fit every feasible K in k_grid, return the lowest-BIC model.

    Ties prefer the smaller K. Infeasible K (too few rows) are skipped; if
    none is feasible this is an error.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    ss = seed_sequence(seed)
    best = None
    for k in sorted(set(int(k) for k in k_grid)):
        try:
            model = fit_mixture(features, y, k, config, seed=seed_sequence(ss, "k", k))
        except FitError:
            continue
        if best is None or model.bic < best.bic:
            best = model
    if best is None:
        raise FitError(
            f"no mixture size in {tuple(k_grid)} is feasible for "
            f"{features.shape[0]} rows")
    return best


# ---------------------------------------------------------------------------
# full nuisance set


@dataclass
class NuisanceSet:
    """All fitted nuisance models plus the feature pipeline they were fit on."""

    selection: LogisticModel
    completion_sat: LogisticModel
    completion_ec: LogisticModel
    outcome_sat: MixtureOutcomeModel
    outcome_ec: MixtureOutcomeModel
    p_sat: float
    config: NuisanceConfig
    binary_mask: np.ndarray
    center: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        if not (0.0 < self.p_sat < 1.0):
            raise ConfigError(f"p_sat must lie in (0, 1), got {self.p_sat}")
        self.binary_mask = np.asarray(self.binary_mask, dtype=bool)

    # -- feature pipeline ---------------------------------------------------

    def _prep(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.binary_mask.size:
            raise ConfigError(
                f"expected {self.binary_mask.size} covariates, got {x.shape[1]}")
        if self.center is not None:
            x = (x - self.center[None, :]) / self.scale[None, :]
        return x

    def ps_feature_matrix(self, x: np.ndarray) -> np.ndarray:
        return apply_feature_map(self.config.ps_features, self._prep(x),
                                 self.binary_mask)

    def om_feature_matrix(self, x: np.ndarray) -> np.ndarray:
        return apply_feature_map(self.config.om_features, self._prep(x),
                                 self.binary_mask)

    # -- predictions (all take raw covariate rows) ---------------------------

    def selection_prob(self, x: np.ndarray) -> np.ndarray:
        return self.selection.predict(self.ps_feature_matrix(x))

    def selection_odds_at(self, x: np.ndarray) -> np.ndarray:
        return selection_odds(self.selection_prob(x))

    def completion_prob(self, x: np.ndarray, arm: int) -> np.ndarray:
        model = self.completion_sat if arm == 1 else self.completion_ec
        return model.predict(self.ps_feature_matrix(x))

    def missingness_odds_at(self, x: np.ndarray, arm: int) -> np.ndarray:
        return missingness_odds(self.completion_prob(x, arm))

    def outcome_model(self, arm: int) -> MixtureOutcomeModel:
        return self.outcome_sat if arm == 1 else self.outcome_ec

    def outcome_mean(self, x: np.ndarray, arm: int) -> np.ndarray:
        return self.outcome_model(arm).mean(self.om_feature_matrix(x))

    def outcome_components(self, x: np.ndarray, arm: int):
        """(component means (n, K), sigmas (K,), weights (K,)) at raw x."""
        model = self.outcome_model(arm)
        return (model.component_means(self.om_feature_matrix(x)),
                model.sigmas, model.weights)

    def warnings(self) -> dict[str, str]:
        out = {}
        for name in ("selection", "completion_sat", "completion_ec",
                     "outcome_sat", "outcome_ec"):
            w = getattr(self, name).warning
            if w:
                out[name] = w
        return out

    # -- serialization --------------------------------------------------------

    def to_json_dict(self) -> dict:
        def logistic(m: LogisticModel):
            return {"coef": m.coef.tolist(), "converged": m.converged,
                    "n_iter": m.n_iter, "clip": list(m.clip),
                    "warning": m.warning}

        def mixture(m: MixtureOutcomeModel):
            return {"weights": m.weights.tolist(), "betas": m.betas.tolist(),
                    "sigmas": m.sigmas.tolist(), "loglik": m.loglik,
                    "bic": m.bic, "converged": m.converged,
                    "n_iter": m.n_iter, "warning": m.warning}

        return {
            "selection": logistic(self.selection),
            "completion_sat": logistic(self.completion_sat),
            "completion_ec": logistic(self.completion_ec),
            "outcome_sat": mixture(self.outcome_sat),
            "outcome_ec": mixture(self.outcome_ec),
            "p_sat": self.p_sat,
            "config": {
                "ps_features": self.config.ps_features,
                "om_features": self.config.om_features,
                "k_grid": list(self.config.k_grid),
                "clip": list(self.config.clip),
                "standardize": self.config.standardize,
                "logistic": vars(self.config.logistic).copy(),
                "mixture": vars(self.config.mixture).copy(),
            },
            "binary_mask": [bool(b) for b in self.binary_mask],
            "center": None if self.center is None else self.center.tolist(),
            "scale": None if self.scale is None else self.scale.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "NuisanceSet":
        def logistic(sub):
            return LogisticModel(coef=np.array(sub["coef"]),
                                 converged=sub["converged"],
                                 n_iter=sub["n_iter"],
                                 clip=tuple(sub["clip"]),
                                 warning=sub.get("warning"))

        def mixture(sub):
            return MixtureOutcomeModel(
                weights=np.array(sub["weights"]), betas=np.array(sub["betas"]),
                sigmas=np.array(sub["sigmas"]), loglik=sub["loglik"],
                bic=sub["bic"], converged=sub["converged"],
                n_iter=sub["n_iter"], warning=sub.get("warning"))

        cfg = d["config"]
        config = NuisanceConfig(
            ps_features=cfg["ps_features"], om_features=cfg["om_features"],
            k_grid=tuple(cfg["k_grid"]), clip=tuple(cfg["clip"]),
            standardize=cfg["standardize"],
            logistic=LogisticConfig(**cfg["logistic"]),
            mixture=MixtureConfig(**cfg["mixture"]))
        return cls(
            selection=logistic(d["selection"]),
            completion_sat=logistic(d["completion_sat"]),
            completion_ec=logistic(d["completion_ec"]),
            outcome_sat=mixture(d["outcome_sat"]),
            outcome_ec=mixture(d["outcome_ec"]),
            p_sat=d["p_sat"], config=config,
            binary_mask=np.array(d["binary_mask"], dtype=bool),
            center=None if d["center"] is None else np.array(d["center"]),
            scale=None if d["scale"] is None else np.array(d["scale"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "NuisanceSet":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def fit_nuisances(ds: Dataset, config: NuisanceConfig | None = None,
                  seed=0) -> NuisanceSet:
    """Fit all five nuisance models on one dataset.

    Strata that a model needs must be nonempty with non-constant labels where
    a propensity is involved; violations raise FitError naming the stratum.
    """
    config = config or NuisanceConfig()
    ds.require_estimable()
    ss = seed_sequence(seed)

    binary_mask = binary_column_mask(ds.x)
    center = scale = None
    x = ds.x
    if config.standardize:
        center = x.mean(axis=0)
        scale = x.std(axis=0)
        # binary and constant columns are left on their original scale
        center[binary_mask] = 0.0
        scale[binary_mask] = 1.0
        scale[scale == 0] = 1.0
        x = (x - center[None, :]) / scale[None, :]

    f_ps = apply_feature_map(config.ps_features, x, binary_mask)
    f_om = apply_feature_map(config.om_features, x, binary_mask)
    sat = ds.s == 1
    obs = ds.r == 1

    def fit_prop(mask, labels, what):
        if not mask.any():
            raise FitError(f"cannot fit {what}: stratum is empty")
        try:
            return fit_logistic(f_ps[mask], labels[mask].astype(np.float64),
                                config.logistic, clip=config.clip)
        except FitError as exc:
            raise FitError(f"cannot fit {what}: {exc}") from None

    selection = fit_prop(np.ones(ds.n, dtype=bool), ds.s, "selection model P(S=1|x)")
    completion_sat = fit_prop(sat, ds.r, "trial-arm completion model P(R=1|x,S=1)")
    completion_ec = fit_prop(~sat, ds.r, "external-control completion model P(R=1|x,S=0)")

    def fit_outcome(mask, what, key):
        if not mask.any():
            raise FitError(f"cannot fit {what}: stratum is empty")
        try:
            return select_mixture(f_om[mask], ds.y[mask], config.k_grid,
                                  config.mixture, seed=seed_sequence(ss, key))
        except FitError as exc:
            raise FitError(f"cannot fit {what}: {exc}") from None

    outcome_sat = fit_outcome(sat & obs, "trial-arm outcome model", "outcome_sat")
    outcome_ec = fit_outcome(~sat & obs, "external-control outcome model", "outcome_ec")

    return NuisanceSet(
        selection=selection, completion_sat=completion_sat,
        completion_ec=completion_ec, outcome_sat=outcome_sat,
        outcome_ec=outcome_ec, p_sat=ds.n_sat / ds.n, config=config,
        binary_mask=binary_mask, center=center, scale=scale)
