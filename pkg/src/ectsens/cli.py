"""Command-line surface: simulate, fit, estimate, grid, calibrate, mc.

Machine-readable output (CSV or JSON) goes to --out when given, otherwise to
standard output; the short human summary goes to the other stream. Every
subcommand accepts --config pointing at a flat "key = value" text file whose
keys mirror the long flag names; explicit flags override file values.

Exit codes: 0 success; 2 for usage problems (bad flags or flag values,
invalid grid or configuration, unreadable files); 1 with a JSON error object
on stderr when the computation itself fails (unfittable model, malformed
data values, estimation failure).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from ._rng import seed_sequence
from .backend import BACKEND
from .calibration import calibrate_all, report_table
from .data import Schema, load_dataset, summarize, write_dataset
from .estimators import (METHODS, SensitivitySpec, bootstrap, estimate,
                         make_grid, sensitivity_grid)
from .exceptions import ConfigError, EctsensError
from .features import FEATURE_MAP_NAMES
from .nuisance import NuisanceConfig, NuisanceSet, fit_nuisances
from .simulation import (DGPConfig, generate, run_mc_study,
                         scenario_from_mapping)
from .tilting import GammaTriple

PROG = "ectsens"

GRID_ROW_FIELDS = ("method", "gamma_s", "gamma_r0", "gamma_r1", "tau_hat",
                   "se", "ci_lo", "ci_hi", "n_boot", "boot_failures", "error")


# ---------------------------------------------------------------------------
# config files and value parsing


def parse_config_file(path) -> dict:
    """Flat key = value file; '#' starts a comment; values stay strings."""
    mapping = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            value = value.strip()
            if not sep or not key:
                raise ConfigError(
                    f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
                value = value[1:-1]
            if key in mapping:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            mapping[key] = value
    return mapping


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    low = str(v).strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def parse_gamma_axis(text) -> tuple[float, ...]:
    """One grid axis: 'a,b,c' values, 'start:stop:step' range, or a scalar."""
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(
                f"range spec must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0.0:
            raise ConfigError(f"range step must be positive, got {step}")
        if stop < start:
            raise ConfigError(f"range stop {stop} below start {start}")
        count = int(round((stop - start) / step)) + 1
        values = start + step * np.arange(count)
        if abs(values[-1] - stop) > 1e-9 * max(1.0, abs(stop)):
            raise ConfigError(
                f"step {step} does not divide the range [{start}, {stop}]")
        if step >= 1e-9:
            values = np.round(values, 12)
        return tuple(float(v) for v in values)
    vals = tuple(float(p) for p in text.split(",") if p.strip())
    if not vals:
        raise ConfigError(f"empty gamma axis spec {text!r}")
    return vals


def _parse_k_grid(text) -> tuple[int, ...]:
    try:
        ks = tuple(int(p) for p in str(text).split(",") if p.strip())
    except ValueError:
        raise ConfigError(
            f"k grid must be comma-separated integers: {text!r}") from None
    if not ks:
        raise ConfigError("k grid is empty")
    return ks


def _parse_clip(text) -> tuple[float, float]:
    parts = [p for p in str(text).split(",") if p.strip()]
    if len(parts) != 2:
        raise ConfigError(f"clip must be 'lo,hi', got {text!r}")
    return (float(parts[0]), float(parts[1]))


class _Resolver:
    """Flag value > config-file value > default; config keys are validated."""

    def __init__(self, args: argparse.Namespace, known: dict):
        self.args = args
        self.cfg = {}
        self.known = known
        path = getattr(args, "config", None)
        if path:
            cfg = parse_config_file(path)
            unknown = sorted(set(cfg) - set(known))
            if unknown:
                raise ConfigError(
                    f"{path}: keys not understood by this subcommand: {unknown}")
            self.cfg = cfg

    def get(self, dest, default=None):
        v = getattr(self.args, dest, None)
        if v is not None:
            return v
        if dest in self.cfg:
            cast = self.known[dest]
            return cast(self.cfg[dest]) if cast is not None else self.cfg[dest]
        return default


# ---------------------------------------------------------------------------
# output plumbing


def _machine_out(text: str, out_path) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _human(msg: str, out_path) -> None:
    # keep stdout parseable when the machine payload is going there
    stream = sys.stdout if out_path else sys.stderr
    print(msg, file=stream)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2)


def _csv_text(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields)
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if row.get(k) is None else row.get(k))
                    for k in fields})
    return buf.getvalue()


# ---------------------------------------------------------------------------
# shared flag groups and resolvers


def _add_io_flags(p, with_schema=True):
    p.add_argument("--in", dest="in_path", metavar="CSV",
                   help="input dataset (CSV with header)")
    if with_schema:
        p.add_argument("--schema", metavar="COLS",
                       help="column roles as 'x1,...,xp,s,r,y' (last three "
                            "are arm, completion, outcome); default: by name")
    p.add_argument("--out", metavar="PATH",
                   help="write machine-readable output here (default: stdout)")
    p.add_argument("--config", metavar="FILE",
                   help="flat key = value file supplying defaults for flags")


def _add_nuisance_flags(p):
    p.add_argument("--ps-features", choices=FEATURE_MAP_NAMES,
                   help="feature map for both propensity models (default identity)")
    p.add_argument("--om-features", choices=FEATURE_MAP_NAMES,
                   help="feature map for the outcome mixtures (default identity)")
    p.add_argument("--k-grid", metavar="K1,K2,...",
                   help="mixture sizes searched by BIC (default 1,2,3)")
    p.add_argument("--clip", metavar="LO,HI",
                   help="propensity clipping bounds (default 0.01,0.99)")
    p.add_argument("--standardize", action="store_true", default=None,
                   help="z-score non-binary covariates before fitting")


def _add_boot_flags(p, default_b):
    p.add_argument("--B", dest="n_boot", type=int, metavar="N",
                   help=f"bootstrap replicates (default {default_b})")
    p.add_argument("--alpha", type=float,
                   help="two-sided interval level in (0, 0.5] (default 0.05)")


def _check_alpha(alpha: float) -> float:
    if not (0.0 < alpha <= 0.5):
        raise ConfigError(f"alpha must lie in (0, 0.5], got {alpha}")
    return alpha


def _seed_flag(p):
    p.add_argument("--seed", type=int, help="integer RNG seed (default 0)")


_IO_KNOWN = {"in_path": str, "schema": str, "out": str}
_NUISANCE_KNOWN = {
    "ps_features": str, "om_features": str, "k_grid": _parse_k_grid,
    "clip": _parse_clip, "standardize": _as_bool,
}
_BOOT_KNOWN = {"n_boot": int, "alpha": float}


def _nuisance_config(res: _Resolver) -> NuisanceConfig:
    k_grid = res.get("k_grid")
    if isinstance(k_grid, str):
        k_grid = _parse_k_grid(k_grid)
    clip = res.get("clip")
    if isinstance(clip, str):
        clip = _parse_clip(clip)
    return NuisanceConfig(
        ps_features=res.get("ps_features", "identity"),
        om_features=res.get("om_features", "identity"),
        k_grid=tuple(k_grid) if k_grid else (1, 2, 3),
        clip=tuple(clip) if clip else (0.01, 0.99),
        standardize=bool(res.get("standardize", False)))


def _load_input(res: _Resolver):
    path = res.get("in_path")
    if not path:
        raise ConfigError("an input dataset is required: pass --in CSV")
    spec = res.get("schema")
    schema = Schema.from_spec(spec) if spec else None
    return load_dataset(path, schema)


def _resolve_nuisances(res: _Resolver, ds, seed):
    """Load a saved NuisanceSet or fit one here; returns (nu, config)."""
    path = res.get("nuisances")
    if path:
        nu = NuisanceSet.load(path)
        return nu, nu.config
    config = _nuisance_config(res)
    nu = fit_nuisances(ds, config, seed=seed_sequence(seed, "fit"))
    return nu, config


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_simulate(args) -> int:
    known = dict(_IO_KNOWN)
    known.update({"n_sat": int, "n_ec": int, "dgp_gamma_s": float,
                  "dgp_gamma_r0": float, "dgp_gamma_r1": float,
                  "j2r_variant": _as_bool, "seed": int})
    res = _Resolver(args, known)
    config = DGPConfig(
        n_sat_target=int(res.get("n_sat", 200)),
        n_ec_target=int(res.get("n_ec", 500)),
        gammas=GammaTriple(float(res.get("dgp_gamma_s", 0.0)),
                           float(res.get("dgp_gamma_r0", 0.0)),
                           float(res.get("dgp_gamma_r1", 0.0))),
        j2r_variant=bool(res.get("j2r_variant", False)),
        seed=int(res.get("seed", 0)))
    ds, _ = generate(config)
    out = res.get("out")
    if out:
        write_dataset(ds, out)
    else:
        buf = io.StringIO()
        write_dataset(ds, buf)
        sys.stdout.write(buf.getvalue())
    _human(_json_text(summarize(ds)), out)
    return 0


def _cmd_fit(args) -> int:
    known = {**_IO_KNOWN, **_NUISANCE_KNOWN, "seed": int}
    res = _Resolver(args, known)
    ds = _load_input(res)
    config = _nuisance_config(res)
    seed = int(res.get("seed", 0))
    nu = fit_nuisances(ds, config, seed=seed_sequence(seed, "fit"))
    out = res.get("out")
    _machine_out(_json_text(nu.to_json_dict()), out)
    ksat = nu.outcome_sat.k
    kec = nu.outcome_ec.k
    summary = (f"fit on n={ds.n} (trial {ds.n_sat}, external {ds.n_ec}); "
               f"outcome mixture sizes: trial {ksat}, external {kec}; "
               f"backend {BACKEND}")
    warn = nu.warnings()
    if warn:
        summary += "".join(f"\nwarning [{k}]: {v}" for k, v in warn.items())
    _human(summary, out)
    return 0


def _cmd_estimate(args) -> int:
    known = {**_IO_KNOWN, **_NUISANCE_KNOWN, **_BOOT_KNOWN,
             "method": str, "gamma_s": float, "gamma_r0": float,
             "gamma_r1": float, "nuisances": str, "seed": int}
    res = _Resolver(args, known)
    ds = _load_input(res)
    method = res.get("method", "primary")
    spec = SensitivitySpec(method, GammaTriple(
        float(res.get("gamma_s", 0.0)), float(res.get("gamma_r0", 0.0)),
        float(res.get("gamma_r1", 0.0))))
    seed = int(res.get("seed", 0))
    n_boot = int(res.get("n_boot", 50))
    alpha = _check_alpha(float(res.get("alpha", 0.05)))
    nu, config = _resolve_nuisances(res, ds, seed)
    if n_boot > 0:
        est = bootstrap(ds, spec, n_boot=n_boot, alpha=alpha,
                        seed=seed_sequence(seed, "boot"), config=config, nu=nu)
    else:
        est = estimate(ds, nu, spec)
    out = res.get("out")
    _machine_out(_json_text(est.to_row()), out)
    ci = "" if est.ci is None else f", {100 * (1 - alpha):g}% CI " \
                                   f"[{est.ci[0]:.4f}, {est.ci[1]:.4f}]"
    _human(f"{spec.label()}: tau_hat = {est.tau_hat:.4f}{ci}", out)
    return 0


def _cmd_grid(args) -> int:
    known = {**_IO_KNOWN, **_NUISANCE_KNOWN, **_BOOT_KNOWN,
             "method": str, "gamma_s": parse_gamma_axis,
             "gamma_r0": parse_gamma_axis, "gamma_r1": parse_gamma_axis,
             "nuisances": str, "seed": int}
    res = _Resolver(args, known)
    ds = _load_input(res)
    method = res.get("method", "tilting")
    axes = []
    for dest in ("gamma_s", "gamma_r0", "gamma_r1"):
        v = res.get(dest, (0.0,))
        axes.append(parse_gamma_axis(v) if isinstance(v, str) else tuple(v))
    grid = make_grid(*axes)
    seed = int(res.get("seed", 0))
    n_boot = int(res.get("n_boot", 0))
    alpha = _check_alpha(float(res.get("alpha", 0.05)))
    nu, config = _resolve_nuisances(res, ds, seed)
    rows = sensitivity_grid(ds, nu, grid, method=method, n_boot=n_boot,
                            alpha=alpha, seed=seed_sequence(seed, "boot"),
                            config=config)
    out = res.get("out")
    _machine_out(_csv_text(rows, GRID_ROW_FIELDS), out)
    n_err = sum(1 for r in rows if r["error"])
    _human(f"{len(rows)} grid points ({method}), {n_err} failed; "
           f"axes {len(axes[0])}x{len(axes[1])}x{len(axes[2])}", out)
    return 0


def _cmd_calibrate(args) -> int:
    known = {**_IO_KNOWN, "k_grid": _parse_k_grid, "seed": int}
    res = _Resolver(args, known)
    ds = _load_input(res)
    k_grid = res.get("k_grid")
    if isinstance(k_grid, str):
        k_grid = _parse_k_grid(k_grid)
    reports = calibrate_all(ds, k_grid=tuple(k_grid) if k_grid else (1, 2, 3),
                            seed=int(res.get("seed", 0)))
    out = res.get("out")
    payload = {ind: rep.to_json_dict() for ind, rep in reports.items()}
    _machine_out(_json_text(payload), out)
    _human(report_table(reports), out)
    return 0


def _cmd_mc(args) -> int:
    if not args.scenario:
        raise ConfigError("mc requires --scenario FILE")
    scenario = scenario_from_mapping(parse_config_file(args.scenario))
    n_reps = args.reps if args.reps is not None else 100
    seed = args.seed if args.seed is not None else 0
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    table = run_mc_study(scenario, n_reps, seed=seed, threads=threads)
    out = args.out
    if args.format == "json":
        _machine_out(_json_text({"rows": table.rows}), out)
    else:
        _machine_out(_csv_text(table.rows, table.FIELDS), out)
    _human(table.table(), out)
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Doubly robust estimation and sensitivity analysis for "
                    "externally controlled trials with intercurrent events.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="{simulate,fit,estimate,grid,calibrate,mc}")

    p = sub.add_parser("simulate", help="draw one synthetic dataset as CSV",
                       description="Draw one synthetic trial + external "
                                   "control dataset and emit it as CSV.")
    p.add_argument("--n-sat", type=int, metavar="N",
                   help="target trial-arm size (default 200)")
    p.add_argument("--n-ec", type=int, metavar="N",
                   help="target external-control size (default 500)")
    p.add_argument("--dgp-gamma-s", type=float, metavar="G",
                   help="selection tilt of the generator (default 0)")
    p.add_argument("--dgp-gamma-r0", type=float, metavar="G",
                   help="external-control completion tilt (default 0)")
    p.add_argument("--dgp-gamma-r1", type=float, metavar="G",
                   help="trial-arm completion tilt (default 0)")
    p.add_argument("--j2r-variant", action="store_true", default=None,
                   help="post-event treated outcomes follow the control "
                        "profile (requires --dgp-gamma-r1 0)")
    _seed_flag(p)
    _add_io_flags(p, with_schema=False)
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("fit", help="fit and save the nuisance models",
                       description="Fit propensity and outcome-mixture "
                                   "models; emit them as a JSON document "
                                   "reusable by estimate/grid.")
    _add_nuisance_flags(p)
    _seed_flag(p)
    _add_io_flags(p)
    p.set_defaults(handler=_cmd_fit)

    p = sub.add_parser("estimate", help="one point estimate with bootstrap CI",
                       description="Point estimate (with stratified-bootstrap "
                                   "interval unless --B 0) as a JSON row.")
    p.add_argument("--method", choices=METHODS,
                   help="estimator (default primary)")
    p.add_argument("--gamma-s", type=float, metavar="G",
                   help="selection sensitivity parameter (default 0)")
    p.add_argument("--gamma-r0", type=float, metavar="G",
                   help="external-control completion sensitivity (default 0)")
    p.add_argument("--gamma-r1", type=float, metavar="G",
                   help="trial-arm completion sensitivity (default 0)")
    p.add_argument("--nuisances", metavar="JSON",
                   help="reuse a NuisanceSet saved by the fit subcommand")
    _add_nuisance_flags(p)
    _add_boot_flags(p, default_b=50)
    _seed_flag(p)
    _add_io_flags(p)
    p.set_defaults(handler=_cmd_estimate)

    p = sub.add_parser("grid", help="sensitivity estimates over a gamma grid",
                       description="Cartesian sweep over the three "
                                   "sensitivity parameters; CSV output, one "
                                   "row per grid point.")
    p.add_argument("--method", choices=("tilting", "j2r"),
                   help="estimator swept over the grid (default tilting)")
    p.add_argument("--gamma-s", metavar="SPEC",
                   help="axis values 'a,b,c' or range 'start:stop:step' "
                        "(default 0)")
    p.add_argument("--gamma-r0", metavar="SPEC",
                   help="axis values or range (default 0)")
    p.add_argument("--gamma-r1", metavar="SPEC",
                   help="axis values or range (default 0)")
    p.add_argument("--nuisances", metavar="JSON",
                   help="reuse a NuisanceSet saved by the fit subcommand")
    _add_nuisance_flags(p)
    _add_boot_flags(p, default_b=0)
    _seed_flag(p)
    _add_io_flags(p)
    p.set_defaults(handler=_cmd_grid)

    p = sub.add_parser("calibrate", help="benchmark sensitivity magnitudes",
                       description="Calibrate plausible sensitivity-parameter "
                                   "magnitudes against observed covariates; "
                                   "JSON report plus a table.")
    p.add_argument("--k-grid", metavar="K1,K2,...",
                   help="mixture sizes for the residual-scale model "
                        "(default 1,2,3)")
    _seed_flag(p)
    _add_io_flags(p)
    p.set_defaults(handler=_cmd_calibrate)

    p = sub.add_parser("mc", help="Monte Carlo study from a scenario file",
                       description="Repeatedly simulate, fit, and estimate; "
                                   "emit a summary table (bias, SE, MSE, "
                                   "coverage, CI width).")
    p.add_argument("--scenario", metavar="FILE", required=True,
                   help="flat key = value scenario description")
    p.add_argument("--reps", type=int, metavar="N",
                   help="number of replications (default 100)")
    p.add_argument("--threads", type=int, metavar="N",
                   help="worker processes (default: CPU count); summaries "
                        "do not depend on this")
    p.add_argument("--format", choices=("csv", "json"), default="csv",
                   help="machine output format (default csv)")
    _seed_flag(p)
    p.add_argument("--out", metavar="PATH",
                   help="write machine-readable output here (default: stdout)")
    p.set_defaults(handler=_cmd_mc)
    return parser


_AXIS_FLAGS = ("--gamma-s", "--gamma-r0", "--gamma-r1")


def _merge_axis_values(argv):
    """Join an axis flag with a following negative-valued spec.

    argparse treats "-0.02:0.02:0.01" as an unknown flag because it starts
    with "-" but is not a plain negative number.  Rewriting the pair as a
    single "--flag=value" token keeps such grid specs usable.
    """
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        nxt = argv[i + 1] if i + 1 < len(argv) else None
        if (tok in _AXIS_FLAGS and nxt is not None and nxt.startswith("-")
                and len(nxt) > 1 and nxt[1] in "0123456789."
                and (":" in nxt or "," in nxt)):
            out.append(f"{tok}={nxt}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(_merge_axis_values(list(argv)))
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except EctsensError as exc:
        payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
