# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fitting kernels.

Same three entry points and contracts as ectsens._reference; the backend
module picks whichever import succeeds. Keep algorithmic changes mirrored in
both implementations.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport M_PI, exp, fabs, log, sqrt

cnp.import_array()

COEF_RUNAWAY = 1.0e3
WEIGHT_FLOOR = 1.0e-10
MONOTONE_SLACK = 1.0e-9

cdef double C_COEF_RUNAWAY = 1.0e3
cdef double C_WEIGHT_FLOOR = 1.0e-10
cdef double C_MONOTONE_SLACK = 1.0e-9
cdef double INF = float("inf")


cdef inline double _expit(double t) noexcept nogil:
    cdef double e
    if t >= 0.0:
        return 1.0 / (1.0 + exp(-t))
    e = exp(t)
    return e / (1.0 + e)


cdef int _chol_factor(double[:, ::1] a, double[:, ::1] l) noexcept nogil:
    """Lower Cholesky of a into l; -1 if a pivot is not strictly positive."""
    cdef Py_ssize_t p = a.shape[0], i, j, k
    cdef double s
    for i in range(p):
        for j in range(i + 1):
            s = a[i, j]
            for k in range(j):
                s -= l[i, k] * l[j, k]
            if i == j:
                if not (s > 0.0):
                    return -1
                l[i, i] = sqrt(s)
            else:
                l[i, j] = s / l[j, j]
    return 0


cdef void _chol_solve(double[:, ::1] l, double[::1] b, double[::1] x,
                      double[::1] z) noexcept nogil:
    cdef Py_ssize_t p = l.shape[0], i, j
    cdef double s
    for i in range(p):
        s = b[i]
        for j in range(i):
            s -= l[i, j] * z[j]
        z[i] = s / l[i, i]
    for i in range(p - 1, -1, -1):
        s = z[i]
        for j in range(i + 1, p):
            s -= l[j, i] * x[j]
        x[i] = s / l[i, i]


cdef int _solve_sym(double[:, ::1] a, double[::1] b, double[::1] x,
                    double[:, ::1] lwork, double[::1] zwork) noexcept nogil:
    """Solve a s.p.d. system; on factor failure retry once with a tiny
    diagonal jitter (mutating a). Returns 0 ok, 1 still singular."""
    cdef Py_ssize_t p = a.shape[0], i
    cdef double trace, jitter
    if _chol_factor(a, lwork) == 0:
        _chol_solve(lwork, b, x, zwork)
        return 0
    trace = 0.0
    for i in range(p):
        trace += a[i, i]
    jitter = 1.0e-10 * (trace / p + 1.0)
    for i in range(p):
        a[i, i] += jitter
    if _chol_factor(a, lwork) == 0:
        _chol_solve(lwork, b, x, zwork)
        return 0
    return 1


cdef void _solve_or_numpy(cnp.ndarray a_arr, cnp.ndarray b_arr,
                          cnp.ndarray x_arr, cnp.ndarray l_arr,
                          cnp.ndarray z_arr):
    # rare non-s.p.d. escape hatch: defer to LAPACK with the jitter applied,
    # raising LinAlgError on exact singularity like the reference kernel
    cdef double[:, ::1] a = a_arr
    cdef double[::1] b = b_arr
    cdef double[::1] x = x_arr
    cdef double[:, ::1] l = l_arr
    cdef double[::1] z = z_arr
    if _solve_sym(a, b, x, l, z) != 0:
        x_arr[:] = np.linalg.solve(a_arr, b_arr)


def logistic_irls(design, labels, double ridge, int max_iter, double tol):
    """Newton/IRLS for ridge-penalized logistic regression.

    design includes the intercept as column 0; the ridge penalty applies to
    slopes only. Convergence is sup-norm of the penalized score <= tol.

    Returns (beta, converged, n_iter, max_score, max_abs_resid).
    """
    cdef cnp.ndarray X_arr = np.ascontiguousarray(design, dtype=np.float64)
    cdef cnp.ndarray y_arr = np.ascontiguousarray(labels, dtype=np.float64)
    cdef double[:, ::1] X = X_arr
    cdef double[::1] y = y_arr
    cdef Py_ssize_t n = X.shape[0], p1 = X.shape[1], i, j, k, it
    cdef cnp.ndarray beta_arr = np.zeros(p1)
    cdef cnp.ndarray score_arr = np.empty(p1)
    cdef cnp.ndarray hess_arr = np.empty((p1, p1))
    cdef cnp.ndarray l_arr = np.zeros((p1, p1))
    cdef cnp.ndarray z_arr = np.empty(p1)
    cdef cnp.ndarray step_arr = np.empty(p1)
    cdef double[::1] beta = beta_arr
    cdef double[::1] score = score_arr
    cdef double[:, ::1] hess = hess_arr
    cdef double[::1] step = step_arr
    cdef double[::1] pen = np.full(p1, ridge)
    cdef double[::1] probs = np.full(n, 0.5)
    cdef double t, resid, w, xw, max_score, max_abs_resid, maxb
    cdef bint converged = False
    cdef int n_iter = 0
    pen[0] = 0.0
    max_score = INF

    for it in range(max_iter):
        for i in range(n):
            t = 0.0
            for j in range(p1):
                t += X[i, j] * beta[j]
            probs[i] = _expit(t)
        for j in range(p1):
            score[j] = -pen[j] * beta[j]
        for i in range(n):
            resid = y[i] - probs[i]
            for j in range(p1):
                score[j] += X[i, j] * resid
        max_score = 0.0
        for j in range(p1):
            if fabs(score[j]) > max_score:
                max_score = fabs(score[j])
        if max_score <= tol:
            converged = True
            break
        for j in range(p1):
            for k in range(p1):
                hess[j, k] = 0.0
        for i in range(n):
            w = probs[i] * (1.0 - probs[i])
            if w < C_WEIGHT_FLOOR:
                w = C_WEIGHT_FLOOR
            for j in range(p1):
                xw = X[i, j] * w
                for k in range(j, p1):
                    hess[j, k] += xw * X[i, k]
        for j in range(p1):
            for k in range(j):
                hess[j, k] = hess[k, j]
            hess[j, j] += pen[j]
        _solve_or_numpy(hess_arr, score_arr, step_arr, l_arr, z_arr)
        maxb = 0.0
        for j in range(p1):
            beta[j] += step[j]
            if fabs(beta[j]) > maxb:
                maxb = fabs(beta[j])
        n_iter += 1
        if maxb > C_COEF_RUNAWAY:
            for i in range(n):
                t = 0.0
                for j in range(p1):
                    t += X[i, j] * beta[j]
                probs[i] = _expit(t)
            break

    max_abs_resid = 0.0
    for i in range(n):
        if fabs(y[i] - probs[i]) > max_abs_resid:
            max_abs_resid = fabs(y[i] - probs[i])
    return beta_arr, bool(converged), n_iter, max_score, max_abs_resid


cdef double _wls(double[:, ::1] X, double[::1] y, double[:] w,
                 cnp.ndarray a_arr, cnp.ndarray b_arr, cnp.ndarray beta_arr,
                 cnp.ndarray l_arr, cnp.ndarray z_arr) except? -1.0:
    """Fill beta with the WLS solution; returns the weighted RSS."""
    cdef double[:, ::1] a = a_arr
    cdef double[::1] b = b_arr
    cdef double[::1] beta = beta_arr
    cdef Py_ssize_t n = X.shape[0], p1 = X.shape[1], i, j, k
    cdef double wi, xw, resid, wrss
    for j in range(p1):
        b[j] = 0.0
        for k in range(p1):
            a[j, k] = 0.0
    for i in range(n):
        wi = w[i]
        for j in range(p1):
            xw = X[i, j] * wi
            b[j] += xw * y[i]
            for k in range(j, p1):
                a[j, k] += xw * X[i, k]
    for j in range(p1):
        for k in range(j):
            a[j, k] = a[k, j]
    _solve_or_numpy(a_arr, b_arr, beta_arr, l_arr, z_arr)
    wrss = 0.0
    for i in range(n):
        resid = y[i]
        for j in range(p1):
            resid -= X[i, j] * beta[j]
        wrss += w[i] * resid * resid
    return wrss


def weighted_linreg(design, y, w):
    """Weighted least squares via normal equations.

    Returns (beta, weighted_rss, weight_sum).
    """
    cdef cnp.ndarray X_arr = np.ascontiguousarray(design, dtype=np.float64)
    cdef cnp.ndarray y_arr = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray w_arr = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, ::1] X = X_arr
    cdef double[::1] yv = y_arr
    cdef double[::1] wv = w_arr
    cdef Py_ssize_t p1 = X.shape[1], i
    cdef cnp.ndarray a_arr = np.empty((p1, p1))
    cdef cnp.ndarray b_arr = np.empty(p1)
    cdef cnp.ndarray beta_arr = np.empty(p1)
    cdef cnp.ndarray l_arr = np.zeros((p1, p1))
    cdef cnp.ndarray z_arr = np.empty(p1)
    cdef double wrss = _wls(X, yv, wv, a_arr, b_arr, beta_arr, l_arr, z_arr)
    cdef double wsum = 0.0
    for i in range(X.shape[0]):
        wsum += wv[i]
    return beta_arr, wrss, wsum


def em_mixture(design, y, resp0, int max_iter, double tol, double var_floor,
               double prune_tol):
    """EM for a mixture of linear regressions with constant weights.

    Starts from initial responsibilities resp0 (rows sum to 1), alternates
    M-step / E-step, prunes components whose weight falls below prune_tol,
    and stops when the relative log-likelihood improvement drops below tol.

    Returns (weights, betas, sigmas, loglik, n_iter, converged, monotone_ok,
    n_pruned).
    """
    cdef cnp.ndarray X_arr = np.ascontiguousarray(design, dtype=np.float64)
    cdef cnp.ndarray y_arr = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray resp_arr = np.ascontiguousarray(resp0, dtype=np.float64).copy()
    cdef double[:, ::1] X = X_arr
    cdef double[::1] yv = y_arr
    cdef double[:, ::1] resp = resp_arr
    cdef Py_ssize_t n = X.shape[0], p1 = X.shape[1]
    cdef Py_ssize_t k = resp.shape[1], i, j, c, it, kept
    cdef double LOG_2PI = log(2.0 * M_PI)

    cdef cnp.ndarray weights_arr = np.full(k, 1.0 / k)
    cdef cnp.ndarray betas_arr = np.zeros((k, p1))
    cdef cnp.ndarray sigmas_arr = np.ones(k)
    cdef cnp.ndarray wsum_arr = np.empty(k)
    cdef cnp.ndarray a_arr = np.empty((p1, p1))
    cdef cnp.ndarray b_arr = np.empty(p1)
    cdef cnp.ndarray bj_arr = np.empty(p1)
    cdef cnp.ndarray l_arr = np.zeros((p1, p1))
    cdef cnp.ndarray z_arr = np.empty(p1)
    cdef cnp.ndarray logf_arr = np.empty(k)
    cdef double[::1] weights = weights_arr
    cdef double[:, ::1] betas = betas_arr
    cdef double[::1] sigmas = sigmas_arr
    cdef double[::1] wsum = wsum_arr
    cdef double[::1] bj = bj_arr
    cdef double[::1] logf = logf_arr

    cdef double loglik = -INF, new_loglik, wrss, s2, t, zz, m, lse, rowsum
    cdef bint converged = False, monotone_ok = True
    cdef int n_pruned = 0, n_iter = 0

    for it in range(max_iter):
        n_iter += 1
        # M-step
        for c in range(k):
            wsum[c] = 0.0
        for i in range(n):
            for c in range(k):
                wsum[c] += resp[i, c]
        kept = 0
        for c in range(k):
            if wsum[c] / n >= prune_tol:
                kept += 1
        if kept < k:
            n_pruned += k - kept
            keep_mask = (wsum_arr[:k] / n >= prune_tol)
            resp_arr = np.ascontiguousarray(resp_arr[:, keep_mask])
            resp = resp_arr
            k = kept
            for i in range(n):
                rowsum = 0.0
                for c in range(k):
                    rowsum += resp[i, c]
                for c in range(k):
                    resp[i, c] /= rowsum
            for c in range(k):
                wsum[c] = 0.0
            for i in range(n):
                for c in range(k):
                    wsum[c] += resp[i, c]
            weights_arr = np.empty(k)
            betas_arr = np.empty((k, p1))
            sigmas_arr = np.empty(k)
            weights = weights_arr
            betas = betas_arr
            sigmas = sigmas_arr
        for c in range(k):
            weights[c] = wsum[c] / n
            wrss = _wls(X, yv, resp[:, c], a_arr, b_arr, bj_arr, l_arr, z_arr)
            for j in range(p1):
                betas[c, j] = bj[j]
            s2 = wrss / wsum[c]
            if s2 < var_floor:
                s2 = var_floor
            sigmas[c] = sqrt(s2)
        # E-step
        new_loglik = 0.0
        for i in range(n):
            m = -INF
            for c in range(k):
                t = 0.0
                for j in range(p1):
                    t += X[i, j] * betas[c, j]
                zz = (yv[i] - t) / sigmas[c]
                logf[c] = (log(weights[c]) - log(sigmas[c])
                           - 0.5 * LOG_2PI - 0.5 * zz * zz)
                if logf[c] > m:
                    m = logf[c]
            lse = 0.0
            for c in range(k):
                lse += exp(logf[c] - m)
            lse = m + log(lse)
            new_loglik += lse
            for c in range(k):
                resp[i, c] = exp(logf[c] - lse)
        if loglik > -INF:
            if new_loglik < loglik - C_MONOTONE_SLACK * (1.0 + fabs(new_loglik)):
                monotone_ok = False
            if new_loglik - loglik < tol * (1.0 + fabs(new_loglik)):
                loglik = new_loglik
                converged = True
                break
        loglik = new_loglik
    return (weights_arr, betas_arr, sigmas_arr, loglik, n_iter,
            bool(converged), bool(monotone_ok), n_pruned)
