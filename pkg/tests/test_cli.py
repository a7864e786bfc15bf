"""Tests for the command-line interface: configs, artifacts, exit codes."""

import json
import math

import numpy as np
import pytest

from ehjscc.cli import main

GAUSS_SYSTEM = """\
source: {kind: gaussian, variance: 1.0}
channel: {noise: 1.0}
arrivals: {delta: 1.0, lam: 1.0}
leakage: zero
capacity: 5.0
p0plus: 0.001
"""

BENCH_CONSTANTS = """\
constants:
  beta: -0.8738
  c1: -0.89
  c2: 0.34
refine_c2: true
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def bench_config(workdir):
    path = workdir / "bench.yaml"
    path.write_text(
        GAUSS_SYSTEM + BENCH_CONSTANTS + "simulate: {horizon: 20000.0, seed: 7}\n"
    )
    return str(path)


@pytest.fixture(scope="module")
def solve_artifacts(workdir, bench_config):
    out = workdir / "solve_out"
    assert main(["solve", "--config", bench_config, "--out", str(out)]) == 0
    return out


# ---------------------------------------------------------------------------
# bound
# ---------------------------------------------------------------------------

def test_bound_gaussian_values(workdir, capsys):
    # [PAPER] published lower bounds 0.5128 (L=3) and 0.5017 (L=5)
    for capacity, expected in ((3.0, 0.5128), (5.0, 0.5017)):
        cfg = workdir / f"bound_{capacity}.yaml"
        cfg.write_text(GAUSS_SYSTEM.replace("capacity: 5.0", f"capacity: {capacity}"))
        assert main(["bound", "--config", str(cfg)]) == 0
        line = capsys.readouterr().out.strip()
        assert len(line.split(".")[1]) == 6
        assert abs(float(line) - expected) <= 1e-3


def test_bound_infinite_capacity(workdir, capsys):
    # [TRIVIAL] unbounded battery: full harvest rate, distortion 1/(1+1)
    cfg = workdir / "bound_inf.yaml"
    cfg.write_text(GAUSS_SYSTEM.replace("capacity: 5.0", "capacity: inf"))
    assert main(["bound", "--config", str(cfg)]) == 0
    assert capsys.readouterr().out.strip() == "0.500000"


def test_bound_bernoulli(workdir, capsys):
    # [PAPER] published binary-source bound at L=5
    cfg = workdir / "bound_bern.yaml"
    cfg.write_text(
        GAUSS_SYSTEM.replace(
            "source: {kind: gaussian, variance: 1.0}",
            "source: {kind: bernoulli, prob: 0.5}",
        )
    )
    assert main(["bound", "--config", str(cfg)]) == 0
    assert abs(float(capsys.readouterr().out.strip()) - 0.1108) <= 1e-3


def test_bound_writes_csv(workdir, bench_config):
    out = workdir / "bound_out"
    assert main(["bound", "--config", bench_config, "--out", str(out)]) == 0
    header, row = (out / "bound.csv").read_text().splitlines()
    assert header == "L,d_lb"
    cap_text, val_text = row.split(",")
    assert cap_text == "5.0"
    # [DERIVED] closed form 1/(2 - exp(-5)) for the unit Gaussian system
    assert float(val_text) == pytest.approx(1.0 / (2.0 - math.exp(-5.0)), rel=1e-12)
    # shortest round-trip float formatting
    assert val_text == repr(float(val_text))


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def test_solve_artifacts_shape(solve_artifacts):
    csv = (solve_artifacts / "solution.csv").read_text().splitlines()
    assert csv[0] == "z,p,kappa,f"
    assert len(csv) == 2001
    sidecar = json.loads((solve_artifacts / "solution.json").read_text())
    assert list(sidecar) == ["pi0", "kappa0", "d_beta", "d_avg",
                             "residual50", "feasible"]
    assert sidecar["feasible"] is True
    # [PAPER] published average distortion 0.5417 for this configuration
    assert abs(sidecar["d_avg"] - 0.5417) / 0.5417 <= 0.02


def test_solve_columns_monotone(solve_artifacts):
    # [PAPER] power rises with charge and the mismatch falls with it
    data = np.loadtxt(solve_artifacts / "solution.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(data[:, 1]) >= 0.0)
    assert np.all(np.diff(data[:, 2]) <= 0.0)


def test_solve_rerun_is_byte_identical(workdir, bench_config, solve_artifacts):
    out = workdir / "solve_out_again"
    assert main(["solve", "--config", bench_config, "--out", str(out)]) == 0
    assert (out / "solution.csv").read_bytes() == \
        (solve_artifacts / "solution.csv").read_bytes()
    assert (out / "solution.json").read_bytes() == \
        (solve_artifacts / "solution.json").read_bytes()


def test_solve_json_format_includes_arrays(workdir, bench_config):
    out = workdir / "solve_json"
    assert main(["solve", "--config", bench_config, "--out", str(out),
                 "--format", "json"]) == 0
    payload = json.loads((out / "solution.json").read_text())
    assert len(payload["z"]) == len(payload["p"]) == 2000
    assert not (out / "solution.csv").exists()


def test_solve_constant_mismatch_nulls(workdir):
    cfg = workdir / "constk.yaml"
    cfg.write_text(GAUSS_SYSTEM + "policy: constant-kappa\nconstants: {c: -0.55}\n")
    out = workdir / "constk_out"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    sidecar = json.loads((out / "solution.json").read_text())
    assert sidecar["d_beta"] is None
    assert sidecar["residual50"] is None
    assert sidecar["kappa0"] == 1.0


def test_solve_infeasible_exit_code(workdir, capsys):
    # constant-mismatch drive constant past the fixed-point threshold:
    # the power profile blows up before reaching the capacity
    cfg = workdir / "blowup.yaml"
    cfg.write_text(GAUSS_SYSTEM + "policy: constant-kappa\nconstants: {c: -0.65}\n")
    assert main(["solve", "--config", str(cfg), "--out",
                 str(cfg.parent / "blowup_out")]) == 3
    assert "infeasible" in capsys.readouterr().err


def test_solve_requires_constants(workdir, capsys):
    cfg = workdir / "noconst.yaml"
    cfg.write_text(GAUSS_SYSTEM)
    assert main(["solve", "--config", str(cfg)]) == 2
    assert "constants" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# config validation and exit codes
# ---------------------------------------------------------------------------

def test_config_error_exit_codes(workdir, capsys):
    bad_value = workdir / "bad_value.yaml"
    bad_value.write_text(GAUSS_SYSTEM.replace("variance: 1.0", "variance: -1.0"))
    assert main(["bound", "--config", str(bad_value)]) == 2

    bad_yaml = workdir / "bad_yaml.yaml"
    bad_yaml.write_text("source: [unclosed\n")
    assert main(["bound", "--config", str(bad_yaml)]) == 2

    missing = str(workdir / "nope.yaml")
    assert main(["bound", "--config", missing]) == 2

    bad_leak = workdir / "bad_leak.yaml"
    bad_leak.write_text(GAUSS_SYSTEM.replace("leakage: zero", "leakage: porous"))
    assert main(["bound", "--config", str(bad_leak)]) == 2
    capsys.readouterr()


def test_usage_error_exits_via_argparse(workdir):
    with pytest.raises(SystemExit):
        main(["solve"])
    with pytest.raises(SystemExit):
        main(["frobnicate", "--config", "x.yaml"])


def test_custom_leakage_table(workdir, capsys):
    table = workdir / "leak_table.csv"
    table.write_text("z,rate\n0.0,0.0\n5.0,0.1\n")
    cfg = workdir / "custom_leak.yaml"
    cfg.write_text(GAUSS_SYSTEM.replace("leakage: zero",
                                        f"leakage: custom:{table}"))
    assert main(["bound", "--config", str(cfg)]) == 0
    capsys.readouterr()

    cfg_missing = workdir / "custom_leak_missing.yaml"
    cfg_missing.write_text(GAUSS_SYSTEM.replace("leakage: zero",
                                                "leakage: custom:/does/not/exist"))
    assert main(["bound", "--config", str(cfg_missing)]) == 2
    capsys.readouterr()


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_simulate_writes_stats_and_report(workdir, bench_config, capsys):
    out = workdir / "sim_out"
    assert main(["simulate", "--config", bench_config, "--out", str(out)]) == 0
    stdout_report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    payload = json.loads((out / "simulation.json").read_text())
    assert payload["report"] == stdout_report
    assert payload["seed"] == 7
    assert len(payload["empirical_cdf"]) == 513
    assert payload["report"]["ks_distance"] <= 0.02
    assert payload["energy_residual"] <= 1e-6
    assert (out / "cdf.csv").read_text().splitlines()[0] == "z,cdf"


def test_simulate_roundtrip_from_solve_csv(workdir, bench_config, solve_artifacts,
                                           capsys):
    # a solve artifact re-ingested as the policy reproduces the direct
    # run exactly: round-trip float formatting loses nothing
    direct_out = workdir / "sim_direct"
    assert main(["simulate", "--config", bench_config, "--out",
                 str(direct_out)]) == 0
    cfg = workdir / "sim_csv.yaml"
    cfg.write_text(
        GAUSS_SYSTEM
        + "simulate:\n  horizon: 20000.0\n  seed: 7\n"
        + f"  policy_csv: {solve_artifacts / 'solution.csv'}\n"
    )
    csv_out = workdir / "sim_from_csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(csv_out)]) == 0
    capsys.readouterr()
    a = json.loads((direct_out / "simulation.json").read_text())
    b = json.loads((csv_out / "simulation.json").read_text())
    assert a["mean_d_dagger"] == b["mean_d_dagger"]
    assert a["empirical_cdf"] == b["empirical_cdf"]


def test_simulate_seed_override(workdir, bench_config, capsys):
    out_a = workdir / "sim_seed_a"
    out_b = workdir / "sim_seed_b"
    assert main(["simulate", "--config", bench_config, "--out", str(out_a),
                 "--seed", "3"]) == 0
    assert main(["simulate", "--config", bench_config, "--out", str(out_b),
                 "--seed", "3"]) == 0
    capsys.readouterr()
    a = json.loads((out_a / "simulation.json").read_text())
    b = json.loads((out_b / "simulation.json").read_text())
    assert a == b
    assert a["seed"] == 3


def test_simulate_infeasible_constants(workdir, capsys):
    cfg = workdir / "sim_raw.yaml"
    cfg.write_text(
        GAUSS_SYSTEM
        + BENCH_CONSTANTS.replace("refine_c2: true", "refine_c2: false")
        + "simulate: {horizon: 1000.0, seed: 0}\n"
    )
    assert main(["simulate", "--config", str(cfg)]) == 3
    assert "infeasible" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# search and sweep
# ---------------------------------------------------------------------------

def test_search_and_sweep(workdir, capsys):
    cfg = workdir / "search.yaml"
    cfg.write_text(
        GAUSS_SYSTEM.replace("capacity: 5.0", "capacity: 2.0")
        + "search: {budget: 150, seed: 7}\n"
        + "sweep: {capacities: [2.0], kappa_budget: 60}\n"
    )
    out = workdir / "search_out"
    assert main(["search", "--config", str(cfg), "--out", str(out)]) == 0
    capsys.readouterr()
    payload = json.loads((out / "search.json").read_text())
    assert payload["feasible"] is True
    assert payload["evaluations"] <= 150
    # modest budget still lands near the published 0.6147 optimum
    assert payload["d_avg"] <= 0.63

    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "L,d_avg_adaptive,d_avg_constk,d_lb"
    cap, d_ad, d_ck, d_lb = (float(v) for v in lines[1].split(","))
    assert cap == 2.0
    assert d_lb < d_ad <= d_ck + 1e-9
    out_text = capsys.readouterr().out
    assert "L,d_avg_adaptive,d_avg_constk,d_lb" in out_text
