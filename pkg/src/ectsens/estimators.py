"""Treatment-effect estimators, bootstrap inference, and sensitivity grids.

All estimators target the trial-arm average treatment effect
tau = E{Y(1) - Y(0) | S=1} and normalize both the trial-arm and the
external-control sums by the number of trial-arm units n_sat. Every
estimate carries per-unit influence contributions whose mean is zero at the
estimate (checked to 1e-10 by the test suite), so tau_hat solves the
estimating equation built from those contributions.

Methods
-------
tilting   doubly robust estimator under the exponential-tilting sensitivity
          model at a GammaTriple; reduces exactly to `primary` at zero tilt
primary   the tilting estimator at gamma = (0, 0, 0)
j2r       control-based (jump-to-reference) imputation estimator: trial-arm
          units with an intercurrent event take on the (tilted)
          external-control outcome profile
ps        propensity-weighting comparator (no outcome models)
om        outcome-regression comparator (no propensities)
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from ._rng import rng_for, seed_sequence
from .data import Dataset
from .exceptions import ConfigError, EstimationError, FitError
from .nuisance import NuisanceConfig, NuisanceSet, fit_nuisances
from .tilting import (GammaTriple, aug_g_arrays, aug_h_arrays,
                      composite_de_arrays, tilted_ratio)

METHODS = ("primary", "tilting", "j2r", "ps", "om")
MAX_RESAMPLE_ATTEMPTS = 10


@dataclass(frozen=True)
class SensitivitySpec:
    """Which estimator to run and at which sensitivity parameters."""

    method: str = "primary"
    gammas: GammaTriple = field(default_factory=GammaTriple.zeros)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; one of {METHODS}")
        if self.method in ("primary", "ps", "om") and not self.gammas.is_zero:
            raise ConfigError(
                f"method {self.method!r} has no sensitivity parameters; "
                "gammas must be zero")
        if self.method == "j2r" and self.gammas.gamma_r1 != 0.0:
            raise ConfigError(
                "j2r does not use gamma_r1 (trial-arm intercurrent outcomes "
                "are imputed from the control profile); it must be 0")

    def label(self) -> str:
        if self.method in ("tilting", "j2r"):
            g = self.gammas
            return (f"{self.method}@s={g.gamma_s:g},r0={g.gamma_r0:g},"
                    f"r1={g.gamma_r1:g}")
        return self.method


def parse_spec(text: str) -> SensitivitySpec:
    """Parse "method" or "method@gs,gr0,gr1" (e.g. "tilting@0.5,0.5,0.5")."""
    text = text.strip()
    if "@" in text:
        method, _, rest = text.partition("@")
        parts = [p for p in rest.replace("s=", "").replace("r0=", "")
                 .replace("r1=", "").split(",") if p != ""]
        if len(parts) != 3:
            raise ConfigError(
                f"estimator spec {text!r} needs three gammas after '@'")
        try:
            gs, gr0, gr1 = (float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"estimator spec {text!r}: gammas must be numbers") from None
        return SensitivitySpec(method.strip(), GammaTriple(gs, gr0, gr1))
    return SensitivitySpec(text)


@dataclass
class Estimate:
    """A point estimate with influence contributions and optional bootstrap CI."""

    method: str
    gammas: GammaTriple
    tau_hat: float
    contributions: np.ndarray
    n_sat: int
    n_ec: int
    se: float | None = None
    ci: tuple[float, float] | None = None
    alpha: float | None = None
    n_boot: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.tau_hat):
            raise EstimationError(f"estimate is not finite: {self.tau_hat}")
        if self.ci is not None:
            lo, hi = self.ci
            if not (lo <= self.tau_hat <= hi):
                raise EstimationError(
                    f"confidence interval ({lo}, {hi}) does not bracket the "
                    f"estimate {self.tau_hat}")

    @property
    def eif_residual(self) -> float:
        """|mean influence contribution|; ~0 when tau_hat solves its equation."""
        return float(abs(np.mean(self.contributions)))

    def to_row(self) -> dict:
        return {
            "method": self.method,
            "gamma_s": self.gammas.gamma_s,
            "gamma_r0": self.gammas.gamma_r0,
            "gamma_r1": self.gammas.gamma_r1,
            "tau_hat": self.tau_hat,
            "se": self.se,
            "ci_lo": None if self.ci is None else self.ci[0],
            "ci_hi": None if self.ci is None else self.ci[1],
            "alpha": self.alpha,
            "n_boot": self.n_boot,
            "n_sat": self.n_sat,
            "n_ec": self.n_ec,
            "eif_residual": self.eif_residual,
        }


def _check_compat(ds: Dataset, nu: NuisanceSet):
    ds.require_estimable()
    if nu.binary_mask.size != ds.p:
        raise EstimationError(
            f"nuisances were fit on {nu.binary_mask.size} covariates, dataset "
            f"has {ds.p}")


def _assemble(ds: Dataset, method: str, gammas: GammaTriple, sat_terms,
              ec_terms) -> Estimate:
    """tau_hat = (sum sat_terms - sum ec_terms) / n_sat, plus contributions."""
    sat = ds.s == 1
    n_sat = int(sat.sum())
    tau = (float(np.sum(sat_terms)) - float(np.sum(ec_terms))) / n_sat
    p_hat = n_sat / ds.n
    phi = np.zeros(ds.n)
    phi[sat] = (sat_terms - tau) / p_hat
    phi[~sat] = -ec_terms / p_hat
    return Estimate(method=method, gammas=gammas, tau_hat=tau,
                    contributions=phi, n_sat=n_sat, n_ec=ds.n - n_sat)


def _tilting_pieces(ds: Dataset, nu: NuisanceSet, gammas: GammaTriple):
    """Per-unit estimator terms shared by the tilting and j2r folds."""
    sat = ds.s == 1
    x_sat = ds.x[sat]
    x_ec = ds.x[~sat]
    r_sat = ds.r[sat].astype(np.float64)
    r_ec = ds.r[~sat].astype(np.float64)
    y_sat = np.where(ds.r[sat] == 1, ds.y[sat], 0.0)
    y_ec = np.where(ds.r[~sat] == 1, ds.y[~sat], 0.0)

    mu1_sat, sig1, w1 = nu.outcome_components(x_sat, arm=1)
    mu0_sat, sig0, w0 = nu.outcome_components(x_sat, arm=0)
    mu0_ec, _, _ = nu.outcome_components(x_ec, arm=0)

    pi_r1_sat = nu.completion_prob(x_sat, arm=1)
    pi_r0_sat = nu.completion_prob(x_sat, arm=0)
    pi_r0_ec = nu.completion_prob(x_ec, arm=0)
    q_s_ec = nu.selection_odds_at(x_ec)

    ratio1 = tilted_ratio(mu1_sat, sig1, w1, gammas.gamma_r1)
    g_sat = aug_g_arrays(mu1_sat, sig1, w1, y_sat, gammas.gamma_r1)
    d_sat, e_sat = composite_de_arrays(mu0_sat, sig0, w0, pi_r0_sat,
                                       gammas.gamma_r0, gammas.gamma_s)
    h_ec = aug_h_arrays(mu0_ec, sig0, w0, pi_r0_ec, r_ec, y_ec,
                        gammas.gamma_r0, gammas.gamma_s)
    return {
        "sat": sat, "r_sat": r_sat, "y_sat": y_sat,
        "pi_r1_sat": pi_r1_sat, "q_s_ec": q_s_ec, "pi_r1_ec": None,
        "ratio1": ratio1, "g_sat": g_sat,
        "de_sat": d_sat / e_sat, "h_ec": h_ec, "x_ec": x_ec,
    }


def estimate_tilting(ds: Dataset, nu: NuisanceSet,
                     gammas: GammaTriple | None = None) -> Estimate:
    """Doubly robust estimate under the tilting sensitivity model."""
    gammas = gammas or GammaTriple.zeros()
    _check_compat(ds, nu)
    pc = _tilting_pieces(ds, nu, gammas)
    r, y = pc["r_sat"], pc["y_sat"]
    q_r1 = (1.0 - pc["pi_r1_sat"]) / pc["pi_r1_sat"]
    sat_terms = (r * y + (1.0 - r) * pc["ratio1"] + r * q_r1 * pc["g_sat"]
                 - pc["de_sat"])
    ec_terms = pc["q_s_ec"] * pc["h_ec"]
    return _assemble(ds, "tilting", gammas, sat_terms, ec_terms)


def estimate_primary(ds: Dataset, nu: NuisanceSet) -> Estimate:
    """Primary (no unmeasured confounding or informative events) estimate.

    This is the tilting estimator at gamma = (0, 0, 0); the tilt kernels
    reduce exactly there, so the zero-tilt formulas

        trial arm:  r y + (1-r) mu1 + r (1-pi_r1)/pi_r1 (y - mu1) - mu0
        controls :  q_s r (y - mu0) / pi_r0

    are what is actually computed.
    """
    est = estimate_tilting(ds, nu, GammaTriple.zeros())
    return replace(est, method="primary")


def estimate_j2r(ds: Dataset, nu: NuisanceSet, gamma_r0: float = 0.0,
                 gamma_s: float = 0.0) -> Estimate:
    """Control-based (jump-to-reference) imputation estimate.

    Trial-arm units with an intercurrent event are assigned the tilted
    external-control outcome profile d/e; the trial-arm completion
    probability scales the control augmentation.
    """
    gammas = GammaTriple(gamma_s=gamma_s, gamma_r0=gamma_r0, gamma_r1=0.0)
    _check_compat(ds, nu)
    pc = _tilting_pieces(ds, nu, gammas)
    r, y = pc["r_sat"], pc["y_sat"]
    sat_terms = r * y - r * pc["de_sat"]
    pi_r1_ec = nu.completion_prob(pc["x_ec"], arm=1)
    ec_terms = pc["q_s_ec"] * pi_r1_ec * pc["h_ec"]
    return _assemble(ds, "j2r", gammas, sat_terms, ec_terms)


def estimate_ps(ds: Dataset, nu: NuisanceSet) -> Estimate:
    """Propensity-weighting comparator (consistent if propensities are right)."""
    _check_compat(ds, nu)
    sat = ds.s == 1
    r_sat = ds.r[sat].astype(np.float64)
    y_sat = np.where(ds.r[sat] == 1, ds.y[sat], 0.0)
    r_ec = ds.r[~sat].astype(np.float64)
    y_ec = np.where(ds.r[~sat] == 1, ds.y[~sat], 0.0)
    pi_r1 = nu.completion_prob(ds.x[sat], arm=1)
    pi_r0 = nu.completion_prob(ds.x[~sat], arm=0)
    q_s = nu.selection_odds_at(ds.x[~sat])
    sat_terms = r_sat * y_sat / pi_r1
    ec_terms = q_s * r_ec * y_ec / pi_r0
    return _assemble(ds, "ps", GammaTriple.zeros(), sat_terms, ec_terms)


def estimate_om(ds: Dataset, nu: NuisanceSet) -> Estimate:
    """Outcome-regression comparator (consistent if outcome models are right)."""
    _check_compat(ds, nu)
    sat = ds.s == 1
    x_sat = ds.x[sat]
    sat_terms = nu.outcome_mean(x_sat, arm=1) - nu.outcome_mean(x_sat, arm=0)
    ec_terms = np.zeros(ds.n - x_sat.shape[0])
    return _assemble(ds, "om", GammaTriple.zeros(), sat_terms, ec_terms)


_DISPATCH = {
    "primary": lambda ds, nu, g: estimate_primary(ds, nu),
    "tilting": lambda ds, nu, g: estimate_tilting(ds, nu, g),
    "j2r": lambda ds, nu, g: estimate_j2r(ds, nu, gamma_r0=g.gamma_r0,
                                          gamma_s=g.gamma_s),
    "ps": lambda ds, nu, g: estimate_ps(ds, nu),
    "om": lambda ds, nu, g: estimate_om(ds, nu),
}


def estimate(ds: Dataset, nu: NuisanceSet, spec: SensitivitySpec) -> Estimate:
    """Dispatch on spec.method."""
    return _DISPATCH[spec.method](ds, nu, spec.gammas)


# ---------------------------------------------------------------------------
# bootstrap


def resample_stratified(ds: Dataset, rng: np.random.Generator) -> Dataset:
    """Resample with replacement within each arm, preserving n_sat and n_ec."""
    sat_idx = np.flatnonzero(ds.s == 1)
    ec_idx = np.flatnonzero(ds.s == 0)
    take_sat = rng.choice(sat_idx, size=sat_idx.size, replace=True)
    take_ec = rng.choice(ec_idx, size=ec_idx.size, replace=True)
    return ds.take(np.concatenate([take_sat, take_ec]))


def _replicate_nuisances(ds: Dataset, config: NuisanceConfig, seed, b: int):
    """Resample and refit; redraw when a required stratum degenerates."""
    last_err = None
    for attempt in range(MAX_RESAMPLE_ATTEMPTS):
        rng = rng_for(seed, "boot_draw", b, attempt)
        rep = resample_stratified(ds, rng)
        try:
            nu = fit_nuisances(rep, config,
                               seed=seed_sequence(seed, "boot_fit", b, attempt))
            return rep, nu
        except FitError as exc:
            last_err = exc
    raise EstimationError(
        f"bootstrap replicate {b}: no fittable resample after "
        f"{MAX_RESAMPLE_ATTEMPTS} attempts (last error: {last_err})")


def bootstrap_taus(ds: Dataset, specs, n_boot: int, config: NuisanceConfig,
                   seed=0) -> np.ndarray:
    """(n_boot, len(specs)) replicate estimates; nuisances are refit once per
    replicate and shared across all specs."""
    specs = list(specs)
    taus = np.empty((n_boot, len(specs)))
    for b in range(n_boot):
        rep, nu = _replicate_nuisances(ds, config, seed, b)
        for j, spec in enumerate(specs):
            taus[b, j] = estimate(rep, nu, spec).tau_hat
    return taus


def wald_interval(tau: float, se: float, alpha: float) -> tuple[float, float]:
    z = float(norm.ppf(1.0 - alpha / 2.0))
    return (tau - z * se, tau + z * se)


def bootstrap(ds: Dataset, spec: SensitivitySpec, n_boot: int = 50,
              alpha: float = 0.05, seed=0,
              config: NuisanceConfig | None = None,
              nu: NuisanceSet | None = None) -> Estimate:
    """Stratified nonparametric bootstrap with full nuisance refits.

    Returns the point estimate on the original data augmented with the
    bootstrap standard error and the Wald interval. Deterministic given seed.
    """
    if n_boot < 2:
        raise ConfigError(f"bootstrap needs n_boot >= 2, got {n_boot}")
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if config is None:
        config = nu.config if nu is not None else NuisanceConfig()
    if nu is None:
        nu = fit_nuisances(ds, config, seed=seed_sequence(seed, "point_fit"))
    point = estimate(ds, nu, spec)
    taus = bootstrap_taus(ds, [spec], n_boot, config, seed=seed)[:, 0]
    se = float(np.std(taus, ddof=1))
    ci = wald_interval(point.tau_hat, se, alpha)
    return replace(point, se=se, ci=ci, alpha=alpha, n_boot=n_boot)


# ---------------------------------------------------------------------------
# sensitivity grid


def make_grid(gamma_s_values, gamma_r0_values, gamma_r1_values) -> list[GammaTriple]:
    """Cartesian product of the three axes, gamma_s varying slowest."""
    return [GammaTriple(gs, gr0, gr1)
            for gs in gamma_s_values
            for gr0 in gamma_r0_values
            for gr1 in gamma_r1_values]


def sensitivity_grid(ds: Dataset, nu: NuisanceSet, grid, method: str = "tilting",
                     n_boot: int = 0, alpha: float = 0.05, seed=0,
                     config: NuisanceConfig | None = None) -> list[dict]:
    """Point estimates over a list of GammaTriples, reusing one nuisance fit.

    With n_boot > 0 the bootstrap refits nuisances once per replicate and
    evaluates the whole grid against them. A failure at one grid point (for
    example a tilt overflow) is recorded in that row's "error" field without
    aborting the rest.
    """
    if method not in ("tilting", "j2r"):
        raise ConfigError(f"sensitivity_grid supports tilting or j2r, got {method!r}")
    grid = list(grid)
    config = config or nu.config
    rows = []
    specs = []
    for g in grid:
        row = {"method": method, "gamma_s": g.gamma_s, "gamma_r0": g.gamma_r0,
               "gamma_r1": g.gamma_r1, "tau_hat": None, "se": None,
               "ci_lo": None, "ci_hi": None, "n_boot": n_boot,
               "boot_failures": 0, "error": None}
        try:
            spec = SensitivitySpec(method, g)
            row["tau_hat"] = estimate(ds, nu, spec).tau_hat
            specs.append((len(rows), spec))
        except (ConfigError, EstimationError) as exc:
            row["error"] = str(exc)
        rows.append(row)

    if n_boot > 0 and specs:
        taus = np.full((n_boot, len(specs)), np.nan)
        for b in range(n_boot):
            rep, rep_nu = _replicate_nuisances(ds, config, seed, b)
            for j, (_, spec) in enumerate(specs):
                try:
                    taus[b, j] = estimate(rep, rep_nu, spec).tau_hat
                except EstimationError:
                    pass
        for j, (i, _) in enumerate(specs):
            ok = np.isfinite(taus[:, j])
            rows[i]["boot_failures"] = int(n_boot - ok.sum())
            if ok.sum() >= 2:
                se = float(np.std(taus[ok, j], ddof=1))
                lo, hi = wald_interval(rows[i]["tau_hat"], se, alpha)
                rows[i].update(se=se, ci_lo=lo, ci_hi=hi)
            else:
                rows[i]["error"] = (rows[i]["error"] or
                                    "bootstrap failed on every replicate")
    return rows
