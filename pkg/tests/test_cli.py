"""Command-line surface: flags, config files, output shapes, exit codes."""
import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ectsens.cli import (GRID_ROW_FIELDS, build_parser, main,
                         parse_config_file, parse_gamma_axis)
from ectsens.data import load_dataset
from ectsens.exceptions import ConfigError
from ectsens.nuisance import NuisanceSet

HELP_GOLDEN = Path(__file__).parent / "data" / "cli_help.txt"


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "sim.csv"
    rc = main(["simulate", "--n-sat", "80", "--n-ec", "160", "--seed", "5",
               "--out", str(path)])
    assert rc == 0
    return str(path)


# ---------------------------------------------------------------------------
# parsing helpers


def test_parse_gamma_axis():
    assert parse_gamma_axis("0.5") == (0.5,)
    assert parse_gamma_axis("-0.3,0.1") == (-0.3, 0.1)
    assert parse_gamma_axis("-0.5:0.5:0.25") == (-0.5, -0.25, 0.0, 0.25, 0.5)
    with pytest.raises(ConfigError, match="start:stop:step"):
        parse_gamma_axis("0:1")
    with pytest.raises(ConfigError, match="does not divide"):
        parse_gamma_axis("0:1:0.3")
    with pytest.raises(ConfigError, match="step must be positive"):
        parse_gamma_axis("0:1:-0.5")


def test_parse_config_file(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\nmethod = \"tilting\"\nk-grid = 1,2  # inline\n"
                    "\ngamma_s = 0.3\n")
    assert parse_config_file(path) == {"method": "tilting", "k_grid": "1,2",
                                       "gamma_s": "0.3"}
    bad = tmp_path / "bad.cfg"
    bad.write_text("a = 1\nnot a pair\n")
    with pytest.raises(ConfigError, match=r"bad\.cfg:2: expected"):
        parse_config_file(bad)
    dup = tmp_path / "dup.cfg"
    dup.write_text("a = 1\na = 2\n")
    with pytest.raises(ConfigError, match=r"dup\.cfg:2: duplicate key"):
        parse_config_file(dup)


def test_help_matches_golden(monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    parser = build_parser()
    blocks = [("main", parser.format_help())]
    subs = parser._subparsers._group_actions[0].choices
    for name in ("simulate", "fit", "estimate", "grid", "calibrate", "mc"):
        blocks.append((name, subs[name].format_help()))
    rendered = "".join(f"==== {name} ====\n{text}\n" for name, text in blocks)
    assert rendered == HELP_GOLDEN.read_text()


def test_help_lists_core_flags(monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    text = HELP_GOLDEN.read_text()
    for flag in ("--gamma-s", "--gamma-r0", "--gamma-r1", "--nuisances",
                 "--ps-features", "--om-features", "--k-grid", "--clip",
                 "--standardize", "--B", "--alpha", "--schema", "--scenario",
                 "--j2r-variant", "--threads", "--format"):
        assert flag in text


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_loadable_csv(sim_csv, capsys):
    ds = load_dataset(sim_csv)
    assert ds.p == 5
    assert 200 <= ds.n <= 280
    # same seed, same file
    out2 = Path(sim_csv).with_name("sim2.csv")
    rc = main(["simulate", "--n-sat", "80", "--n-ec", "160", "--seed", "5",
               "--out", str(out2)])
    assert rc == 0
    assert out2.read_text() == Path(sim_csv).read_text()
    capsys.readouterr()


def test_simulate_stdout_payload(capsys):
    rc = main(["simulate", "--n-sat", "40", "--n-ec", "80", "--seed", "1"])
    assert rc == 0
    cap = capsys.readouterr()
    header = cap.out.splitlines()[0]
    assert header == "x1,x2,x3,x4,x5,s,r,y"
    summary = json.loads(cap.err)
    assert summary["n"] == len(cap.out.strip().splitlines()) - 1


# ---------------------------------------------------------------------------
# fit / estimate / grid


def test_fit_saves_reusable_nuisances(sim_csv, tmp_path, capsys):
    nu_path = tmp_path / "nu.json"
    rc = main(["fit", "--in", sim_csv, "--k-grid", "1", "--out", str(nu_path)])
    assert rc == 0
    assert "backend" in capsys.readouterr().out
    nu = NuisanceSet.load(nu_path)
    assert nu.config.k_grid == (1,)


def test_estimate_json_row_and_determinism(sim_csv, tmp_path, capsys):
    argv = ["estimate", "--in", sim_csv, "--k-grid", "1", "--B", "8",
            "--seed", "2"]
    rc = main(argv + ["--out", str(tmp_path / "a.json")])
    assert rc == 0
    assert "tau_hat" in capsys.readouterr().out
    rc = main(argv + ["--out", str(tmp_path / "b.json")])
    assert rc == 0
    text_a = (tmp_path / "a.json").read_text()
    assert text_a == (tmp_path / "b.json").read_text()
    row = json.loads(text_a)
    assert row["method"] == "primary" and row["n_boot"] == 8
    assert row["ci_lo"] <= row["tau_hat"] <= row["ci_hi"]
    assert row["eif_residual"] <= 1e-10
    capsys.readouterr()


def test_estimate_without_bootstrap(sim_csv, capsys):
    rc = main(["estimate", "--in", sim_csv, "--k-grid", "1", "--B", "0",
               "--method", "tilting", "--gamma-s", "-0.2"])
    assert rc == 0
    row = json.loads(capsys.readouterr().out)
    assert row["se"] is None and row["gamma_s"] == -0.2


def test_estimate_reuses_saved_nuisances(sim_csv, tmp_path, capsys):
    nu_path = tmp_path / "nu.json"
    assert main(["fit", "--in", sim_csv, "--k-grid", "1",
                 "--out", str(nu_path)]) == 0
    capsys.readouterr()
    assert main(["estimate", "--in", sim_csv, "--nuisances", str(nu_path),
                 "--B", "0"]) == 0
    from_saved = json.loads(capsys.readouterr().out)
    assert main(["estimate", "--in", sim_csv, "--k-grid", "1", "--B", "0"]) == 0
    refit = json.loads(capsys.readouterr().out)
    assert from_saved["tau_hat"] == refit["tau_hat"]


def test_grid_cartesian_sweep(sim_csv, capsys):
    rc = main(["grid", "--in", sim_csv, "--method", "tilting",
               "--gamma-s", "-0.5:0.5:0.25", "--gamma-r0", "-0.5:0.5:0.25",
               "--gamma-r1", "-0.5:0.5:0.25", "--k-grid", "1", "--B", "0"])
    assert rc == 0
    cap = capsys.readouterr()
    lines = cap.out.strip().splitlines()
    assert len(lines) == 1 + 5 ** 3
    assert lines[0] == ",".join(GRID_ROW_FIELDS)
    rows = list(csv.DictReader(io.StringIO(cap.out)))
    assert all(row["error"] == "" for row in rows)
    assert "125 grid points" in cap.err


def test_grid_negative_axis_values(sim_csv, capsys):
    rc = main(["grid", "--in", sim_csv, "--gamma-s", "-0.3,0.1",
               "--k-grid", "1"])
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [row["gamma_s"] for row in rows] == ["-0.3", "0.1"]
    # a bare negative scalar needs no '=' joining
    rc = main(["grid", "--in", sim_csv, "--gamma-s", "-0.3", "--k-grid", "1"])
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [row["gamma_s"] for row in rows] == ["-0.3"]


# ---------------------------------------------------------------------------
# config files


def test_config_file_defaults_and_flag_precedence(sim_csv, tmp_path, capsys):
    cfg = tmp_path / "est.cfg"
    cfg.write_text("method = tilting\ngamma-s = 0.2\ngamma-r0 = 0.1\n"
                   "k-grid = 1\nB = 0\n".replace("B =", "n_boot ="))
    rc = main(["estimate", "--in", sim_csv, "--config", str(cfg),
               "--gamma-s", "0.4"])
    assert rc == 0
    row = json.loads(capsys.readouterr().out)
    assert row["method"] == "tilting"
    assert row["gamma_s"] == 0.4  # flag wins
    assert row["gamma_r0"] == 0.1  # config fills the rest
    assert row["n_boot"] is None  # n_boot 0 disables the bootstrap


def test_config_file_unknown_key(sim_csv, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("wibble = 3\n")
    rc = main(["estimate", "--in", sim_csv, "--config", str(cfg)])
    assert rc == 2
    assert "keys not understood" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# exit codes


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--bogus"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_bad_alpha_exits_2(sim_csv, capsys):
    rc = main(["estimate", "--in", sim_csv, "--alpha", "0.6"])
    assert rc == 2
    assert "alpha must lie in (0, 0.5]" in capsys.readouterr().err


def test_missing_input_exits_2(capsys):
    rc = main(["estimate", "--in", "/no/such/file.csv"])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_bad_axis_exits_2(sim_csv, capsys):
    rc = main(["grid", "--in", sim_csv, "--gamma-s", "0:1:0.3"])
    assert rc == 2
    assert "does not divide" in capsys.readouterr().err


def test_computational_failure_exits_1(tmp_path, capsys):
    # too few rows to fit any propensity model: a data-quality failure, so
    # the error surfaces as a JSON object rather than a usage message
    path = tmp_path / "tiny.csv"
    path.write_text("x1,s,r,y\n" + "0.1,1,1,1.0\n0.2,0,1,0.5\n"
                    "0.3,1,0,\n0.4,0,0,\n")
    rc = main(["estimate", "--in", str(path), "--k-grid", "1", "--B", "0"])
    assert rc == 1
    payload = json.loads(capsys.readouterr().err)
    assert payload["error"]["type"] == "FitError"
    assert payload["error"]["message"]


# ---------------------------------------------------------------------------
# calibrate / mc


def test_calibrate_smoke(sim_csv, tmp_path, capsys):
    out = tmp_path / "cal.json"
    rc = main(["calibrate", "--in", sim_csv, "--k-grid", "1",
               "--out", str(out)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert set(payload) == {"S", "R_in_S1", "R_in_S0"}
    assert payload["S"]["gamma_name"] == "gamma_s"
    assert capsys.readouterr().out.startswith("indicator")


def test_mc_smoke(tmp_path, capsys):
    scenario = tmp_path / "scen.cfg"
    scenario.write_text(
        "n_sat = 60\nn_ec = 120\nestimators = primary\nk_grid = 1\n"
        "n_boot = 0\noracle_draws = 100000\nlabel = smoke\n")
    out = tmp_path / "mc.csv"
    rc = main(["mc", "--scenario", str(scenario), "--reps", "2",
               "--seed", "1", "--threads", "1", "--out", str(out)])
    assert rc == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert rows[0]["method"] == "primary"
    assert rows[0]["n_reps"] == "2"
    assert rows[0]["label"] == "smoke"
    assert "primary" in capsys.readouterr().out


def test_mc_json_format(tmp_path, capsys):
    scenario = tmp_path / "scen.cfg"
    scenario.write_text(
        "n_sat = 60\nn_ec = 120\nestimators = primary\nk_grid = 1\n"
        "n_boot = 0\noracle_draws = 100000\n")
    rc = main(["mc", "--scenario", str(scenario), "--reps", "2",
               "--seed", "1", "--threads", "1", "--format", "json"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["rows"]) == 1


def test_mc_requires_scenario(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["mc"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ectsens", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("usage: ectsens")
