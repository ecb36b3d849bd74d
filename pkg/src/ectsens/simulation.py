"""Synthetic data generation and Monte Carlo replication harness.

The generator produces a trial arm of about n_sat_target units alongside
n_ec_target external controls. Covariates are four N(0.25, 1) draws plus one
Bernoulli(0.5); all structural signals run through the bent basis
z_j = (x_j^2 + 2 sin x_j - 1.5)/sqrt(2) (binary column passes through), so a
model fit on the bent features is correctly specified and a fit on raw x is
not. Potential outcomes share one noise draw:

    y0 = sum(z)/3 + eps,   y1 = sum(z)/2 + eps

hence y1 - y0 = sum(z)/6 exactly for every unit. Nonzero sensitivity
parameters tilt trial selection and completion by the relevant latent
outcome, making the missingness/selection informative in exactly the way the
tilting estimators model. Intercepts are solved per dataset so that the
expected trial fraction and the completion rates hit their targets.

The J2R variant additionally carries a post-intercurrent-event treated
outcome equal to the control potential outcome ("jump to reference"), which
is what the j2r estimator's estimand refers to.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import bisect
from scipy.special import expit

from ._rng import rng_for, seed_sequence
from .data import Dataset
from .estimators import (SensitivitySpec, bootstrap_taus, estimate,
                         wald_interval)
from .exceptions import ConfigError, EctsensError, SimulationError
from .features import sqsin_bend
from .nuisance import NuisanceConfig, fit_nuisances
from .tilting import GammaTriple

COMPLETION_TARGET = 0.5
INTERCEPT_BRACKET = 20.0
INTERCEPT_TOL = 1.0e-4
MAX_FAILURE_FRAC = 0.02

_BINARY_COL = np.array([False, False, False, False, True])


@dataclass(frozen=True)
class DGPConfig:
    n_sat_target: int = 200
    n_ec_target: int = 500
    gammas: GammaTriple = field(default_factory=GammaTriple.zeros)
    j2r_variant: bool = False
    oracle_draws: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        if self.n_sat_target < 1 or self.n_ec_target < 1:
            raise ConfigError("sample size targets must be positive")
        if self.oracle_draws < 100_000:
            raise ConfigError("oracle_draws must be at least 1e5")
        if self.j2r_variant and self.gammas.gamma_r1 != 0.0:
            raise ConfigError(
                "the J2R variant requires gamma_r1 = 0: the trial-arm "
                "completion draw would otherwise condition on which "
                "post-event outcome is realized")

    @property
    def n_total(self) -> int:
        return self.n_sat_target + self.n_ec_target

    @property
    def sat_fraction(self) -> float:
        return self.n_sat_target / self.n_total


def draw_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    x = np.empty((n, 5))
    x[:, :4] = rng.normal(0.25, 1.0, size=(n, 4))
    x[:, 4] = rng.integers(0, 2, size=n).astype(np.float64)
    return x


def z_transform(x: np.ndarray) -> np.ndarray:
    """Bent basis of the generator; binary column 5 passes through."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 5:
        raise ConfigError(f"z_transform expects 5 covariates, got {x.shape[-1]}")
    return sqsin_bend(x, _BINARY_COL)


def solve_intercept(target: float, linear_parts: np.ndarray) -> float:
    """alpha with mean(expit(alpha + linear_parts)) = target, by bisection."""
    if not (0.0 < target < 1.0):
        raise ConfigError(f"target rate must lie in (0, 1), got {target}")
    lp = np.asarray(linear_parts, dtype=np.float64)
    if lp.size == 0:
        raise SimulationError("cannot solve an intercept with no units")

    def gap(alpha):
        return float(np.mean(expit(alpha + lp))) - target

    lo, hi = -INTERCEPT_BRACKET, INTERCEPT_BRACKET
    if gap(lo) > 0.0 or gap(hi) < 0.0:
        raise SimulationError(
            f"intercept bracket [-{INTERCEPT_BRACKET}, {INTERCEPT_BRACKET}] "
            f"cannot reach target rate {target}")
    alpha = float(bisect(gap, lo, hi, xtol=1e-8))
    if abs(gap(alpha)) > INTERCEPT_TOL:
        raise SimulationError("intercept solve did not reach its tolerance")
    return alpha


def _draw_structure(config: DGPConfig, n: int, rng: np.random.Generator):
    """Covariates, bent sums, and potential outcomes for n units."""
    x = draw_covariates(n, rng)
    zsum = z_transform(x).sum(axis=1)
    eps = rng.normal(0.0, 1.0, size=n)
    y0 = zsum / 3.0 + eps
    y1 = zsum / 2.0 + eps
    # "jump to reference": the post-event treated outcome follows the
    # control profile; sharing the noise keeps its conditional mean at mu_0.
    y1_post = y0.copy() if config.j2r_variant else None
    return x, zsum, y0, y1, y1_post


def _draw_selection(config: DGPConfig, zsum, y0, rng):
    lp = 0.1 * zsum + config.gammas.gamma_s * y0
    alpha_s = solve_intercept(config.sat_fraction, lp)
    s = (rng.random(zsum.size) < expit(alpha_s + lp)).astype(np.int8)
    return s, alpha_s


def _draw_completion(zsum_arm, y_arm, gamma, rng):
    lp = zsum_arm / 6.0 - gamma * y_arm
    alpha = solve_intercept(COMPLETION_TARGET, lp)
    r = (rng.random(zsum_arm.size) < expit(alpha + lp)).astype(np.int8)
    return r, alpha


def generate(config: DGPConfig, seed=None):
    """One synthetic dataset. Returns (Dataset, latents dict)."""
    if seed is None:
        seed = config.seed
    rng = rng_for(seed, "dgp")
    n = config.n_total
    x, zsum, y0, y1, y1_post = _draw_structure(config, n, rng)
    s, alpha_s = _draw_selection(config, zsum, y0, rng)
    sat = s == 1
    if not sat.any() or sat.all():
        raise SimulationError("degenerate draw: one arm is empty")

    r = np.zeros(n, dtype=np.int8)
    # trial-arm completion tilts on y1; in the J2R variant gamma_r1 is 0 by
    # construction so the draw never references the post-event outcome
    r[sat], alpha_r_sat = _draw_completion(
        zsum[sat], y1[sat], config.gammas.gamma_r1, rng)
    r[~sat], alpha_r_ec = _draw_completion(
        zsum[~sat], y0[~sat], config.gammas.gamma_r0, rng)

    y = np.where(sat, y1, y0)
    y = np.where(r == 1, y, np.nan)
    ds = Dataset(x, s, r, y)
    latents = {
        "zsum": zsum, "y0": y0, "y1": y1, "y1_post": y1_post,
        "alpha_s": alpha_s, "alpha_r_sat": alpha_r_sat,
        "alpha_r_ec": alpha_r_ec,
    }
    return ds, latents


def true_tau(config: DGPConfig, draws: int | None = None, seed=0):
    """Monte Carlo oracle for the estimand. Returns (tau, mc_se).

    Standard variant: E{y1 - y0 | trial arm}. J2R variant: completers keep
    y1, intercurrent units jump to the reference outcome before differencing.
    """
    draws = int(draws if draws is not None else config.oracle_draws)
    if draws < 100_000:
        raise ConfigError("oracle draws must be at least 1e5")
    rng = rng_for(seed, "oracle")
    x, zsum, y0, y1, y1_post = _draw_structure(config, draws, rng)
    s, _ = _draw_selection(config, zsum, y0, rng)
    sat = s == 1
    n_sat = int(sat.sum())
    if n_sat < 100:
        raise SimulationError("oracle draw produced too few trial-arm units")
    if config.j2r_variant:
        r1, _ = _draw_completion(zsum[sat], y1[sat], 0.0, rng)
        y_treat = np.where(r1 == 1, y1[sat], y1_post[sat])
    else:
        y_treat = y1[sat]
    diff = y_treat - y0[sat]
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(n_sat))


# ---------------------------------------------------------------------------
# Monte Carlo study


@dataclass(frozen=True)
class MCScenario:
    dgp: DGPConfig
    nuisance: NuisanceConfig = field(default_factory=NuisanceConfig)
    estimators: tuple[SensitivitySpec, ...] = (SensitivitySpec("primary"),)
    n_boot: int = 50
    alpha: float = 0.05
    label: str = ""

    def __post_init__(self):
        if not self.estimators:
            raise ConfigError("scenario needs at least one estimator spec")
        if self.n_boot < 0:
            raise ConfigError("n_boot must be >= 0")
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        object.__setattr__(self, "estimators", tuple(self.estimators))


def _mc_rep(scenario: MCScenario, seed, rep: int) -> dict:
    try:
        ds, _ = generate(scenario.dgp, seed=seed_sequence(seed, "rep", rep))
        nu = fit_nuisances(ds, scenario.nuisance,
                           seed=seed_sequence(seed, "rep_fit", rep))
        taus = np.array([estimate(ds, nu, spec).tau_hat
                         for spec in scenario.estimators])
        ci_lo = ci_hi = None
        if scenario.n_boot > 0:
            btaus = bootstrap_taus(ds, scenario.estimators, scenario.n_boot,
                                   scenario.nuisance,
                                   seed=seed_sequence(seed, "rep_boot", rep))
            ses = btaus.std(axis=0, ddof=1)
            ci_lo = np.empty(taus.size)
            ci_hi = np.empty(taus.size)
            for j in range(taus.size):
                ci_lo[j], ci_hi[j] = wald_interval(taus[j], float(ses[j]),
                                                   scenario.alpha)
        return {"ok": True, "taus": taus, "ci_lo": ci_lo, "ci_hi": ci_hi}
    except EctsensError as exc:
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _mc_rep_star(args):
    return _mc_rep(*args)


@dataclass
class MCTable:
    """Summary rows of a Monte Carlo study, one per estimator spec."""

    rows: list[dict]

    def __post_init__(self):
        for row in self.rows:
            if row["mse"] is not None and row["bias"] is not None:
                if row["mse"] < row["bias"] ** 2 - 1e-12:
                    raise SimulationError(
                        f"mse {row['mse']} below squared bias; aggregation bug")
            if row["coverage"] is not None and not (0.0 <= row["coverage"] <= 1.0):
                raise SimulationError("coverage outside [0, 1]")

    FIELDS = ("label", "method", "gamma_s", "gamma_r0", "gamma_r1",
              "ps_features", "om_features", "n_reps", "n_failed", "truth",
              "truth_mc_se", "mean_tau", "bias", "emp_se", "mse", "coverage",
              "ci_width", "n_boot")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.FIELDS)
            w.writeheader()
            for row in self.rows:
                w.writerow({k: row.get(k) for k in self.FIELDS})

    def table(self) -> str:
        def fmt(v, spec=".3f"):
            return "-" if v is None else format(v, spec)

        lines = [f"{'estimator':<28} {'bias':>7} {'se':>7} {'mse':>7} "
                 f"{'cover':>7} {'width':>7} {'fail':>5}"]
        for r in self.rows:
            name = r["method"]
            if r["method"] in ("tilting", "j2r"):
                name += (f"@{r['gamma_s']:g},{r['gamma_r0']:g},{r['gamma_r1']:g}")
            cov = "-" if r["coverage"] is None else f"{100 * r['coverage']:.1f}%"
            lines.append(
                f"{name:<28} {fmt(r['bias']):>7} {fmt(r['emp_se']):>7} "
                f"{fmt(r['mse']):>7} {cov:>7} {fmt(r['ci_width']):>7} "
                f"{r['n_failed']:>5}")
        return "\n".join(lines)


def run_mc_study(scenario: MCScenario, n_reps: int, seed=0,
                 threads: int = 1) -> MCTable:
    """n_reps independent datasets -> bias/SE/MSE/coverage/width per estimator.

    Reps failing with a library error are excluded and counted; more than
    2% failures aborts the study. Summaries are deterministic given seed and
    independent of the thread count.
    """
    if n_reps < 2:
        raise ConfigError("run_mc_study needs n_reps >= 2")
    truth, truth_se = true_tau(scenario.dgp, scenario.dgp.oracle_draws,
                               seed=seed_sequence(seed, "oracle"))
    args = [(scenario, seed, rep) for rep in range(n_reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_mc_rep_star, args,
                                    chunksize=max(1, n_reps // (threads * 8))))
    else:
        results = [_mc_rep(*a) for a in args]

    failures = [r["error"] for r in results if not r["ok"]]
    if len(failures) > MAX_FAILURE_FRAC * n_reps:
        raise SimulationError(
            f"{len(failures)}/{n_reps} replications failed (> "
            f"{MAX_FAILURE_FRAC:.0%}); first errors: {failures[:3]}")
    ok = [r for r in results if r["ok"]]

    rows = []
    for j, spec in enumerate(scenario.estimators):
        taus = np.array([r["taus"][j] for r in ok])
        row = {
            "label": scenario.label, "method": spec.method,
            "gamma_s": spec.gammas.gamma_s, "gamma_r0": spec.gammas.gamma_r0,
            "gamma_r1": spec.gammas.gamma_r1,
            "ps_features": scenario.nuisance.ps_features,
            "om_features": scenario.nuisance.om_features,
            "n_reps": len(ok), "n_failed": len(failures),
            "truth": truth, "truth_mc_se": truth_se,
            "mean_tau": float(taus.mean()),
            "bias": float(taus.mean() - truth),
            "emp_se": float(taus.std(ddof=1)),
            "mse": float(np.mean((taus - truth) ** 2)),
            "coverage": None, "ci_width": None, "n_boot": scenario.n_boot,
        }
        if scenario.n_boot > 0:
            lo = np.array([r["ci_lo"][j] for r in ok])
            hi = np.array([r["ci_hi"][j] for r in ok])
            row["coverage"] = float(np.mean((lo <= truth) & (truth <= hi)))
            row["ci_width"] = float(np.mean(hi - lo))
        rows.append(row)
    return MCTable(rows)


# ---------------------------------------------------------------------------
# scenario assembly from flat config mappings (CLI)


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, str):
        low = v.strip().lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _as_list(v) -> list:
    if isinstance(v, (list, tuple)):
        return list(v)
    # semicolons separate items whose own syntax contains commas, e.g.
    # estimators = primary; tilting@0.1,0.1,0
    s = str(v)
    sep = ";" if ";" in s else ","
    return [part.strip() for part in s.split(sep) if part.strip()]


def scenario_from_mapping(d: dict) -> MCScenario:
    """Build an MCScenario from a flat key/value mapping (see README)."""
    d = dict(d)

    def pop(key, default):
        return d.pop(key, default)

    dgp = DGPConfig(
        n_sat_target=int(pop("n_sat", 200)),
        n_ec_target=int(pop("n_ec", 500)),
        gammas=GammaTriple(float(pop("dgp_gamma_s", 0.0)),
                           float(pop("dgp_gamma_r0", 0.0)),
                           float(pop("dgp_gamma_r1", 0.0))),
        j2r_variant=_as_bool(pop("j2r_variant", False)),
        oracle_draws=int(pop("oracle_draws", 1_000_000)),
        seed=int(pop("dgp_seed", 0)))
    nuisance = NuisanceConfig(
        ps_features=str(pop("ps_features", "identity")),
        om_features=str(pop("om_features", "identity")),
        k_grid=tuple(int(k) for k in _as_list(pop("k_grid", (1, 2, 3)))),
        standardize=_as_bool(pop("standardize", False)))
    from .estimators import parse_spec
    estimators = tuple(parse_spec(s) for s in _as_list(pop("estimators", "primary")))
    scenario = MCScenario(
        dgp=dgp, nuisance=nuisance, estimators=estimators,
        n_boot=int(pop("n_boot", 50)), alpha=float(pop("alpha", 0.05)),
        label=str(pop("label", "")))
    if d:
        raise ConfigError(f"unknown scenario keys: {sorted(d)}")
    return scenario
