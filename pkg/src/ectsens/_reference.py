"""Numpy reference implementations of the fitting kernels.

The compiled extension (_fastpath) implements the same three entry points
with the same contracts; ectsens.backend picks whichever is available. Keep
algorithmic changes mirrored in both.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

# Newton iterates are abandoned once coefficients run away; the caller treats
# the last stabilized iterate as the result with converged=False.
COEF_RUNAWAY = 1.0e3
WEIGHT_FLOOR = 1.0e-10
MONOTONE_SLACK = 1.0e-9


def _solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        jitter = 1.0e-10 * (np.trace(a) / a.shape[0] + 1.0)
        return np.linalg.solve(a + jitter * np.eye(a.shape[0]), b)


def logistic_irls(design, labels, ridge, max_iter, tol):
    """Newton/IRLS for ridge-penalized logistic regression.

    design includes the intercept as column 0; the ridge penalty applies to
    slopes only. Convergence is sup-norm of the penalized score <= tol.

    Returns (beta, converged, n_iter, max_score, max_abs_resid).
    """
    design = np.ascontiguousarray(design, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.float64)
    n, p1 = design.shape
    beta = np.zeros(p1)
    penalty = np.full(p1, ridge)
    penalty[0] = 0.0
    converged = False
    n_iter = 0
    max_score = np.inf
    probs = np.full(n, 0.5)
    for _ in range(max_iter):
        probs = expit(design @ beta)
        score = design.T @ (labels - probs) - penalty * beta
        max_score = float(np.max(np.abs(score)))
        if max_score <= tol:
            converged = True
            break
        w = np.maximum(probs * (1.0 - probs), WEIGHT_FLOOR)
        hess = design.T @ (design * w[:, None]) + np.diag(penalty)
        beta = beta + _solve_spd(hess, score)
        n_iter += 1
        if np.max(np.abs(beta)) > COEF_RUNAWAY:
            probs = expit(design @ beta)
            break
    max_abs_resid = float(np.max(np.abs(labels - probs)))
    return beta, converged, n_iter, max_score, max_abs_resid


def weighted_linreg(design, y, w):
    """Weighted least squares via normal equations.

    Returns (beta, weighted_rss, weight_sum).
    """
    design = np.ascontiguousarray(design, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    xw = design * w[:, None]
    a = xw.T @ design
    b = xw.T @ y
    beta = _solve_spd(a, b)
    resid = y - design @ beta
    wrss = float(np.dot(w, resid * resid))
    return beta, wrss, float(np.sum(w))


_LOG_2PI = np.log(2.0 * np.pi)


def _mixture_loglik_resp(design, y, weights, betas, sigmas):
    # log f_ik = log w_k + log N(y_i; design_i beta_k, sigma_k^2)
    mu = design @ betas.T  # (n, K)
    z = (y[:, None] - mu) / sigmas[None, :]
    logf = (np.log(weights)[None, :] - np.log(sigmas)[None, :]
            - 0.5 * _LOG_2PI - 0.5 * z * z)
    m = np.max(logf, axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(logf - m), axis=1))
    resp = np.exp(logf - lse[:, None])
    return float(np.sum(lse)), resp


def em_mixture(design, y, resp0, max_iter, tol, var_floor, prune_tol):
    """EM for a mixture of linear regressions with constant weights.

    Starts from initial responsibilities resp0 (rows sum to 1), alternates
    M-step / E-step, prunes components whose weight falls below prune_tol,
    and stops when the relative log-likelihood improvement drops below tol.

    Returns (weights, betas, sigmas, loglik, n_iter, converged, monotone_ok,
    n_pruned).
    """
    design = np.ascontiguousarray(design, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    resp = np.ascontiguousarray(resp0, dtype=np.float64)
    n, p1 = design.shape
    k = resp.shape[1]
    loglik = -np.inf
    converged = False
    monotone_ok = True
    n_pruned = 0
    n_iter = 0
    weights = np.full(k, 1.0 / k)
    betas = np.zeros((k, p1))
    sigmas = np.ones(k)
    for _ in range(max_iter):
        n_iter += 1
        # M-step
        wsum = resp.sum(axis=0)
        keep = wsum / n >= prune_tol
        if not keep.all():
            n_pruned += int(np.sum(~keep))
            resp = resp[:, keep]
            resp /= resp.sum(axis=1, keepdims=True)
            wsum = resp.sum(axis=0)
            k = resp.shape[1]
        weights = wsum / n
        betas = np.empty((k, p1))
        sigmas = np.empty(k)
        for j in range(k):
            beta_j, wrss, wtot = weighted_linreg(design, y, resp[:, j])
            betas[j] = beta_j
            sigmas[j] = np.sqrt(max(wrss / wtot, var_floor))
        # E-step
        new_loglik, resp = _mixture_loglik_resp(design, y, weights, betas, sigmas)
        if np.isfinite(loglik):
            if new_loglik < loglik - MONOTONE_SLACK * (1.0 + abs(new_loglik)):
                monotone_ok = False
            if new_loglik - loglik < tol * (1.0 + abs(new_loglik)):
                loglik = new_loglik
                converged = True
                break
        loglik = new_loglik
    return weights, betas, sigmas, loglik, n_iter, converged, monotone_ok, n_pruned
