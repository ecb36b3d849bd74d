"""Compare the compiled kernels against the numpy reference implementation.

Times the three fitting kernels (logistic IRLS, weighted least squares,
mixture EM) on identical inputs, checks that both backends return the same
numbers, then times an end-to-end nuisance fit in a subprocess per backend
(the backend is chosen at import, so the full pipeline needs one process
each).

Usage:
    python3 benchmarks/bench_backends.py
    python3 benchmarks/bench_backends.py --n 4000 --repeats 10 --json
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from ectsens import _reference

try:
    from ectsens import _fastpath
except ImportError:
    _fastpath = None

_FIT_SNIPPET = """\
import json, time
from ectsens import backend
from ectsens.nuisance import NuisanceConfig, fit_nuisances
from ectsens.simulation import DGPConfig, generate

ds, _ = generate(DGPConfig(), seed=11)
cfg = NuisanceConfig(k_grid=(1, 2, 3))
fit_nuisances(ds, cfg, seed=0)
best = min(
    (lambda t0: (fit_nuisances(ds, cfg, seed=0), time.perf_counter() - t0)[1])(
        time.perf_counter())
    for _ in range(3))
print(json.dumps({"backend": backend.BACKEND, "secs": best}))
"""


def make_workloads(n: int, seed: int):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 5))
    design_wide = np.column_stack([np.ones(n), x, np.sin(x)])
    lp = design_wide @ rng.normal(scale=0.4, size=design_wide.shape[1])
    labels = (rng.random(n) < 1.0 / (1.0 + np.exp(-lp))).astype(np.float64)

    design = np.column_stack([np.ones(n), x])
    comp = rng.random(n) < 0.45
    y = np.where(comp, 1.0 + x[:, 0], -0.5 - 0.8 * x[:, 1])
    y = y + 0.6 * rng.normal(size=n)
    resp0 = rng.dirichlet(np.ones(2), size=n)
    w = rng.uniform(0.1, 1.0, size=n)

    return {
        "logistic_irls": (design_wide, labels, 1e-6, 100, 1e-8),
        "em_mixture": (design, y, resp0, 500, 1e-6, 1e-6 * float(y.var()),
                       1e-6),
        "weighted_linreg": (design, y, w),
    }


def check_agreement(workloads) -> float:
    """Max abs difference between backends across all kernel outputs."""
    worst = 0.0
    for name, args in workloads.items():
        ref = getattr(_reference, name)(*args)
        fast = getattr(_fastpath, name)(*args)
        for a, b in zip(ref, fast):
            diff = float(np.max(np.abs(np.asarray(a, dtype=np.float64)
                                       - np.asarray(b, dtype=np.float64))))
            worst = max(worst, diff)
    return worst


def time_kernel(fn, args, repeats: int) -> float:
    fn(*args)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def time_fit(backend_name: str) -> float:
    env = dict(os.environ, ECTSENS_BACKEND=backend_name)
    out = subprocess.run([sys.executable, "-c", _FIT_SNIPPET], env=env,
                         capture_output=True, text=True, check=True)
    payload = json.loads(out.stdout)
    if payload["backend"] != backend_name:
        raise RuntimeError(f"subprocess ran {payload['backend']}, "
                           f"wanted {backend_name}")
    return float(payload["secs"])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        description="benchmark compiled vs python kernel backends")
    ap.add_argument("--n", type=int, default=2000,
                    help="rows per kernel workload (default 2000)")
    ap.add_argument("--repeats", type=int, default=20,
                    help="timing repeats, best-of (default 20)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true",
                    help="emit one JSON object instead of a table")
    args = ap.parse_args(argv)

    if _fastpath is None:
        print("compiled extension not importable; nothing to compare "
              "(build it with pip install -e . --no-build-isolation)")
        return 1

    workloads = make_workloads(args.n, args.seed)
    worst = check_agreement(workloads)

    rows = []
    for name, wargs in workloads.items():
        t_py = time_kernel(getattr(_reference, name), wargs, args.repeats)
        t_c = time_kernel(getattr(_fastpath, name), wargs, args.repeats)
        rows.append((name, t_py, t_c))
    t_fit_py = time_fit("python")
    t_fit_c = time_fit("compiled")
    rows.append(("fit_nuisances (end to end)", t_fit_py, t_fit_c))

    if args.json:
        print(json.dumps({
            "n": args.n, "repeats": args.repeats, "max_abs_diff": worst,
            "timings": [{"kernel": k, "python_s": p, "compiled_s": c,
                         "speedup": p / c} for k, p, c in rows],
        }))
        return 0

    print(f"workload rows: {args.n}   repeats: {args.repeats} (best-of)")
    print(f"backend agreement: max abs output difference {worst:.2e}")
    print(f"{'kernel':<28} {'python':>10} {'compiled':>10} {'speedup':>8}")
    for name, t_py, t_c in rows:
        print(f"{name:<28} {t_py * 1e3:>9.2f}ms {t_c * 1e3:>9.2f}ms "
              f"{t_py / t_c:>7.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
