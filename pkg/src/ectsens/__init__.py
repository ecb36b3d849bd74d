"""Doubly robust estimation and omnibus sensitivity analysis for externally
controlled trials with intercurrent events.

The pipeline: load or simulate a dataset (one trial arm plus external
controls, outcomes observed only for completers), fit propensity and
Gaussian-mixture outcome models, then compute tilting / control-based /
comparator estimators with stratified-bootstrap intervals, sweep the
sensitivity parameters over a grid, and calibrate plausible parameter
magnitudes against observed covariates.
"""
from .backend import BACKEND
from .calibration import (CalibrationReport, calibrate_all, calibrate_gamma,
                          calibrate_indicator, implied_rho2, partial_rho2,
                          report_table, rho_star)
from .data import (Dataset, Schema, Unit, from_units, load_dataset, stratify,
                   summarize, write_dataset)
from .estimators import (METHODS, Estimate, SensitivitySpec, bootstrap,
                         bootstrap_taus, estimate, estimate_j2r, estimate_om,
                         estimate_primary, estimate_ps, estimate_tilting,
                         make_grid, parse_spec, resample_stratified,
                         sensitivity_grid, wald_interval)
from .exceptions import (CalibrationError, ConfigError, DataError,
                         EctsensError, EstimationError, FitError,
                         SimulationError, TiltOverflowError)
from .features import FEATURE_MAP_NAMES, apply_feature_map, binary_column_mask
from .nuisance import (LogisticConfig, LogisticModel, MixtureConfig,
                       MixtureOutcomeModel, NuisanceConfig, NuisanceSet,
                       fit_logistic, fit_mixture, fit_nuisances,
                       missingness_odds, select_mixture, selection_odds)
from .simulation import (DGPConfig, MCScenario, MCTable, draw_covariates,
                         generate, run_mc_study, scenario_from_mapping,
                         solve_intercept, true_tau, z_transform)
from .tilting import (GammaTriple, aug_g, aug_h, composite_de, tilted_b,
                      tilted_c, tilted_ratio)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CalibrationError", "CalibrationReport", "ConfigError",
    "DGPConfig", "DataError", "Dataset", "EctsensError", "Estimate",
    "EstimationError", "FEATURE_MAP_NAMES", "FitError", "GammaTriple",
    "LogisticConfig", "LogisticModel", "METHODS", "MCScenario", "MCTable",
    "MixtureConfig", "MixtureOutcomeModel", "NuisanceConfig", "NuisanceSet",
    "Schema", "SensitivitySpec", "SimulationError", "TiltOverflowError",
    "Unit", "apply_feature_map", "aug_g", "aug_h", "binary_column_mask",
    "bootstrap", "bootstrap_taus", "calibrate_all", "calibrate_gamma",
    "calibrate_indicator", "composite_de", "draw_covariates", "estimate",
    "estimate_j2r", "estimate_om", "estimate_primary", "estimate_ps",
    "estimate_tilting", "fit_logistic", "fit_mixture", "fit_nuisances",
    "from_units", "generate", "implied_rho2", "load_dataset", "make_grid",
    "missingness_odds", "parse_spec", "partial_rho2", "report_table",
    "resample_stratified", "rho_star", "run_mc_study",
    "scenario_from_mapping", "select_mixture", "selection_odds",
    "sensitivity_grid", "solve_intercept", "stratify", "summarize",
    "tilted_b", "tilted_c", "tilted_ratio", "true_tau", "wald_interval",
    "write_dataset", "z_transform",
]
