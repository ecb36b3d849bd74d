"""Exponentially tilted moments and augmentation kernels.

For a Gaussian mixture Y | x ~ sum_k w_k N(m_k(x), s_k^2), the exponential
tilt E{e^{gY} | x} and its mean counterpart have closed forms:

    c(x; g) = sum_k w_k exp(g m_k + g^2 s_k^2 / 2)
    b(x; g) = sum_k w_k (m_k + g s_k^2) exp(g m_k + g^2 s_k^2 / 2)

so b/c is the tilted conditional mean E{Y e^{gY}|x}/E{e^{gY}|x}. Everything
is evaluated in log space (signed log-sum-exp for b); log values above 700
raise TiltOverflowError rather than silently clamping.

The composite ratio d/e mixes completion status into the external-control
tilt and equals the sensitivity model's E{Y(0) | x, S=1}:

    d = pi * b(g_s) c(g_r0) + (1-pi) * b(g_s + g_r0)
    e = pi * c(g_s) c(g_r0) + (1-pi) * c(g_s + g_r0)

with pi = P(R=1 | x, S=0). aug_g and aug_h are the mean-zero augmentation
terms of the estimator's influence function for trial-arm completers and
external controls respectively. All tilts reduce exactly (not merely to
rounding) at gamma = 0: c = 1, b = mixture mean, d/e = mixture mean,
g = y - mean, h = r (y - mean) / pi.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Unit
from .exceptions import ConfigError, EstimationError, TiltOverflowError
from .nuisance import MixtureOutcomeModel, NuisanceSet

LOG_OVERFLOW = 700.0


@dataclass(frozen=True)
class GammaTriple:
    """Sensitivity parameters: trial selection, and completion in each arm."""

    gamma_s: float = 0.0
    gamma_r0: float = 0.0
    gamma_r1: float = 0.0

    def __post_init__(self):
        for name in ("gamma_s", "gamma_r0", "gamma_r1"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ConfigError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def zeros(cls) -> "GammaTriple":
        return cls(0.0, 0.0, 0.0)

    @property
    def is_zero(self) -> bool:
        return self.gamma_s == 0.0 and self.gamma_r0 == 0.0 and self.gamma_r1 == 0.0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.gamma_s, self.gamma_r0, self.gamma_r1)


def _overflow(what: str, gamma: float, max_log: float):
    raise TiltOverflowError(
        f"tilted {what} overflows at gamma={gamma:g}: log magnitude "
        f"{max_log:.1f} exceeds {LOG_OVERFLOW:g}; the sensitivity parameter is "
        "too large for this outcome scale")


def log_c_b(mu: np.ndarray, sigmas: np.ndarray, weights: np.ndarray,
            gamma: float):
    """(log c, b) for component-mean matrix mu (n, K); exact at gamma=0."""
    mu = np.atleast_2d(mu)
    if gamma == 0.0:
        return np.zeros(mu.shape[0]), mu @ weights
    expo = gamma * mu + (0.5 * gamma * gamma) * (sigmas * sigmas)[None, :]
    terms = np.log(weights)[None, :] + expo
    max_term = float(np.max(terms))
    if max_term > LOG_OVERFLOW:
        _overflow("normalizer c", gamma, max_term)
    m = np.max(terms, axis=1, keepdims=True)
    scaled = np.exp(terms - m)
    log_c = m[:, 0] + np.log(np.sum(scaled, axis=1))
    a = mu + gamma * (sigmas * sigmas)[None, :]
    signed = np.sum(a * scaled, axis=1)
    with np.errstate(divide="ignore"):
        log_abs_b = m[:, 0] + np.log(np.abs(signed))
    max_log_b = float(np.max(log_abs_b)) if log_abs_b.size else 0.0
    if max_log_b > LOG_OVERFLOW:
        _overflow("numerator b", gamma, max_log_b)
    b = np.exp(m[:, 0]) * signed
    return log_c, b


def tilted_ratio(mu, sigmas, weights, gamma: float) -> np.ndarray:
    """b/c, the tilted conditional mean; computed in log space."""
    mu = np.atleast_2d(mu)
    if gamma == 0.0:
        return mu @ weights
    log_c, b = log_c_b(mu, sigmas, weights, gamma)
    out = np.zeros(mu.shape[0])
    nz = b != 0.0
    expo = np.log(np.abs(b[nz])) - log_c[nz]
    max_expo = float(np.max(expo)) if expo.size else 0.0
    if max_expo > LOG_OVERFLOW:
        _overflow("mean ratio b/c", gamma, max_expo)
    out[nz] = np.sign(b[nz]) * np.exp(expo)
    return out


def _model_components(model: MixtureOutcomeModel, features):
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return model.component_means(features), model.sigmas, model.weights


def tilted_c(model: MixtureOutcomeModel, features, gamma: float) -> float:
    """E{e^{gamma Y} | x} under the fitted mixture; features on model scale."""
    mu, sig, w = _model_components(model, features)
    log_c, _ = log_c_b(mu, sig, w, gamma)
    if float(log_c[0]) > LOG_OVERFLOW:
        _overflow("normalizer c", gamma, float(log_c[0]))
    return float(np.exp(log_c[0]))


def tilted_b(model: MixtureOutcomeModel, features, gamma: float) -> float:
    """E{Y e^{gamma Y} | x} under the fitted mixture."""
    mu, sig, w = _model_components(model, features)
    _, b = log_c_b(mu, sig, w, gamma)
    return float(b[0])


def composite_de_arrays(mu0, sigmas0, weights0, pi_r0, gamma_r0: float,
                        gamma_s: float):
    """(d, e) arrays from external-control mixture components and pi_r0."""
    mu0 = np.atleast_2d(mu0)
    pi_r0 = np.asarray(pi_r0, dtype=np.float64)
    if gamma_r0 == 0.0 and gamma_s == 0.0:
        mean0 = mu0 @ weights0
        return mean0, np.ones(mu0.shape[0])
    log_c_s, b_s = log_c_b(mu0, sigmas0, weights0, gamma_s)
    log_c_r0, _ = log_c_b(mu0, sigmas0, weights0, gamma_r0)
    log_c_sr, b_sr = log_c_b(mu0, sigmas0, weights0, gamma_s + gamma_r0)
    max_cross = float(np.max(log_c_s + log_c_r0))
    if max_cross > LOG_OVERFLOW:
        _overflow("composite normalizer e", gamma_s + gamma_r0, max_cross)
    c_s = np.exp(log_c_s)
    c_r0 = np.exp(log_c_r0)
    c_sr = np.exp(log_c_sr)
    d = pi_r0 * b_s * c_r0 + (1.0 - pi_r0) * b_sr
    e = pi_r0 * c_s * c_r0 + (1.0 - pi_r0) * c_sr
    if not (np.isfinite(d).all() and np.isfinite(e).all()):
        _overflow("composite moments d/e", gamma_s + gamma_r0, np.inf)
    return d, e


def aug_g_arrays(mu1, sigmas1, weights1, y, gamma_r1: float) -> np.ndarray:
    """Trial-arm completer augmentation: e^{g y}(y c - b)/c^2 at each row."""
    mu1 = np.atleast_2d(mu1)
    y = np.asarray(y, dtype=np.float64)
    if gamma_r1 == 0.0:
        return y - mu1 @ weights1
    log_c, b = log_c_b(mu1, sigmas1, weights1, gamma_r1)
    expo = gamma_r1 * y - log_c
    max_expo = float(np.max(expo)) if expo.size else 0.0
    if max_expo > LOG_OVERFLOW:
        _overflow("augmentation g", gamma_r1, max_expo)
    ratio = tilted_ratio(mu1, sigmas1, weights1, gamma_r1)
    return np.exp(expo) * (y - ratio)


def aug_h_arrays(mu0, sigmas0, weights0, pi_r0, r, y_filled, gamma_r0: float,
                 gamma_s: float) -> np.ndarray:
    """External-control augmentation h; y_filled must be 0 where r=0.

    h = (r - pi) m1 / e - (r - pi) d m2 / e^2 + r m3 / e - r d m4 / e^2
    with the m-terms built from the tilted moments; completers (r=1)
    additionally contribute the outcome-dependent m3, m4 pieces.
    """
    mu0 = np.atleast_2d(mu0)
    pi_r0 = np.asarray(pi_r0, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    y = np.asarray(y_filled, dtype=np.float64)
    if gamma_r0 == 0.0 and gamma_s == 0.0:
        mean0 = mu0 @ weights0
        return r * (y - mean0) / pi_r0
    log_c_s, b_s = log_c_b(mu0, sigmas0, weights0, gamma_s)
    log_c_r0, _ = log_c_b(mu0, sigmas0, weights0, gamma_r0)
    log_c_sr, b_sr = log_c_b(mu0, sigmas0, weights0, gamma_s + gamma_r0)
    c_s = np.exp(log_c_s)
    c_r0 = np.exp(log_c_r0)
    c_sr = np.exp(log_c_sr)
    d = pi_r0 * b_s * c_r0 + (1.0 - pi_r0) * b_sr
    e = pi_r0 * c_s * c_r0 + (1.0 - pi_r0) * c_sr
    m1 = b_s * c_r0 - b_sr
    m2 = c_s * c_r0 - c_sr
    q_r0 = (1.0 - pi_r0) / pi_r0
    for g, what in ((gamma_s, "exp(gamma_s y)"), (gamma_r0, "exp(gamma_r0 y)"),
                    (gamma_s + gamma_r0, "exp((gamma_s+gamma_r0) y)")):
        max_e = float(np.max(g * y)) if y.size else 0.0
        if max_e > LOG_OVERFLOW:
            _overflow(what, g, max_e)
    ey_s = np.exp(gamma_s * y)
    ey_r0 = np.exp(gamma_r0 * y)
    ey_sr = np.exp((gamma_s + gamma_r0) * y)
    m3 = b_s * ey_r0 + c_r0 * (y * ey_s - b_s) + q_r0 * y * ey_sr
    m4 = c_s * ey_r0 + c_r0 * (ey_s - c_s) + q_r0 * ey_sr
    h = ((r - pi_r0) * m1 / e - (r - pi_r0) * d * m2 / (e * e)
         + r * m3 / e - r * d * m4 / (e * e))
    if not np.isfinite(h).all():
        _overflow("augmentation h", gamma_s + gamma_r0, np.inf)
    return h


# ---------------------------------------------------------------------------
# per-unit wrappers with contract checks


def composite_de(nu: NuisanceSet, x, gamma_r0: float, gamma_s: float):
    """(d, e) at one covariate row; d/e estimates E{Y(0) | x, trial arm}."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    mu0, sig0, w0 = nu.outcome_components(x, arm=0)
    pi_r0 = nu.completion_prob(x, arm=0)
    d, e = composite_de_arrays(mu0, sig0, w0, pi_r0, gamma_r0, gamma_s)
    return float(d[0]), float(e[0])


def aug_g(nu: NuisanceSet, unit: Unit, gamma_r1: float) -> float:
    """Augmentation for a trial-arm completer; defined only for s=1, r=1."""
    if unit.s != 1 or unit.r != 1:
        raise EstimationError(
            f"aug_g is defined only for trial-arm completers (s=1, r=1); got "
            f"s={unit.s}, r={unit.r}")
    x = unit.x[None, :]
    mu1, sig1, w1 = nu.outcome_components(x, arm=1)
    g = aug_g_arrays(mu1, sig1, w1, np.array([unit.y]), gamma_r1)
    return float(g[0])


def aug_h(nu: NuisanceSet, unit: Unit, gamma_r0: float, gamma_s: float) -> float:
    """Augmentation for an external-control unit; defined only for s=0."""
    if unit.s != 0:
        raise EstimationError(
            f"aug_h is defined only for external controls (s=0); got s={unit.s}")
    x = unit.x[None, :]
    mu0, sig0, w0 = nu.outcome_components(x, arm=0)
    pi_r0 = nu.completion_prob(x, arm=0)
    y_filled = np.array([0.0 if unit.y is None else unit.y])
    h = aug_h_arrays(mu0, sig0, w0, pi_r0, np.array([float(unit.r)]), y_filled,
                     gamma_r0, gamma_s)
    return float(h[0])
