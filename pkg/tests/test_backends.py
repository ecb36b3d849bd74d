"""Compiled and reference kernels implement identical contracts."""
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.special import expit

import ectsens
from ectsens import _reference
from ectsens.backend import BACKEND

compiled = pytest.importorskip(
    "ectsens._fastpath", reason="compiled extension not built")

RNG = np.random.default_rng(42)


def _logistic_problem(n=400, p=3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    design = np.column_stack([np.ones(n), x])
    beta = rng.normal(scale=0.8, size=p + 1)
    labels = (rng.random(n) < expit(design @ beta)).astype(np.float64)
    return design, labels


def test_backend_is_one_of_the_two_names():
    assert BACKEND in ("compiled", "python")


def test_logistic_irls_parity():
    design, labels = _logistic_problem()
    ref = _reference.logistic_irls(design, labels, 1e-6, 100, 1e-8)
    fast = compiled.logistic_irls(design, labels, 1e-6, 100, 1e-8)
    np.testing.assert_allclose(np.asarray(fast[0]), ref[0],
                               rtol=0.0, atol=1e-8)
    assert bool(fast[1]) and bool(ref[1])


def test_weighted_linreg_parity():
    rng = np.random.default_rng(7)
    design = np.column_stack([np.ones(200), rng.normal(size=(200, 2))])
    y = design @ np.array([0.5, -1.0, 2.0]) + rng.normal(size=200)
    w = rng.uniform(0.1, 1.0, size=200)
    b_ref, rss_ref, ws_ref = _reference.weighted_linreg(design, y, w)
    b_fast, rss_fast, ws_fast = compiled.weighted_linreg(design, y, w)
    np.testing.assert_allclose(np.asarray(b_fast), b_ref, rtol=0, atol=1e-10)
    assert rss_fast == pytest.approx(rss_ref, abs=1e-8)
    assert ws_fast == pytest.approx(ws_ref, abs=1e-10)


def test_em_mixture_parity():
    rng = np.random.default_rng(11)
    n = 300
    x = rng.normal(size=n)
    comp = rng.random(n) < 0.5
    y = np.where(comp, 1.0 + x, -1.0 - x) + 0.4 * rng.normal(size=n)
    design = np.column_stack([np.ones(n), x])
    resp0 = rng.dirichlet(np.ones(2), size=n)
    args = (design, y, resp0, 300, 1e-6, 1e-8, 1e-6)
    w_r, b_r, s_r, ll_r, it_r, conv_r, mono_r, pr_r = _reference.em_mixture(*args)
    w_f, b_f, s_f, ll_f, it_f, conv_f, mono_f, pr_f = compiled.em_mixture(*args)
    np.testing.assert_allclose(np.asarray(w_f), w_r, rtol=0, atol=1e-8)
    np.testing.assert_allclose(np.asarray(b_f), b_r, rtol=0, atol=1e-7)
    np.testing.assert_allclose(np.asarray(s_f), s_r, rtol=0, atol=1e-8)
    assert ll_f == pytest.approx(ll_r, abs=1e-6)
    assert (it_f, bool(conv_f), bool(mono_f), pr_f) == \
           (it_r, bool(conv_r), bool(mono_r), pr_r)


@pytest.mark.parametrize("backend_impl", [_reference, compiled],
                         ids=["python", "compiled"])
def test_irls_recovers_known_coefficients(backend_impl):
    # intercept 0.3, slope 0.7; at n=10000 the fit lands within 0.1 of both
    rng = np.random.default_rng(123)
    n = 10_000
    x = rng.normal(size=n)
    labels = (rng.random(n) < expit(0.3 + 0.7 * x)).astype(np.float64)
    design = np.column_stack([np.ones(n), x])
    beta, converged, *_ = backend_impl.logistic_irls(design, labels,
                                                     1e-6, 100, 1e-8)
    beta = np.asarray(beta)
    assert converged
    assert abs(beta[0] - 0.3) <= 0.1
    assert abs(beta[1] - 0.7) <= 0.1


def test_runaway_coefficients_reported_as_nonconverged():
    # perfectly separated labels push the MLE to infinity
    design = np.column_stack([np.ones(40), np.linspace(-2, 2, 40)])
    labels = (design[:, 1] > 0).astype(np.float64)
    for impl in (_reference, compiled):
        beta, converged, *_ = impl.logistic_irls(design, labels, 0.0, 200, 1e-10)
        assert not converged


def _backend_in_subprocess(env_value):
    env = dict(os.environ)
    env["ECTSENS_BACKEND"] = env_value
    return subprocess.run(
        [sys.executable, "-c", "import ectsens; print(ectsens.BACKEND)"],
        capture_output=True, text=True, env=env)


def test_backend_env_override():
    proc = _backend_in_subprocess("python")
    assert proc.returncode == 0 and proc.stdout.strip() == "python"
    proc = _backend_in_subprocess("compiled")
    assert proc.returncode == 0 and proc.stdout.strip() == "compiled"
    proc = _backend_in_subprocess("bogus")
    assert proc.returncode != 0 and "ECTSENS_BACKEND" in proc.stderr


def test_package_reexports_backend_name():
    assert ectsens.BACKEND == BACKEND
