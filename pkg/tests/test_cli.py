import json
from pathlib import Path

import numpy as np
import pytest

from gtbm.cli import main
from gtbm.config import ExperimentConfig, apply_overrides, load_config
from gtbm.errors import ConfigError


def run(tmp_path, *args):
    out = tmp_path / "out"
    code = main(list(args) + ["--out", str(out)])
    return code, out


def test_oracle_selftest_passes(tmp_path):
    code, out = run(tmp_path, "oracle-selftest")
    assert code == 0
    report = json.loads((out / "oracle_selftest_report.json").read_text())
    assert all(c["passed"] for c in report["checks"])
    assert (out / "oracle_selftest.png").exists()


def test_unknown_subcommand_exits_one(capsys):
    assert main(["definitely-not-a-command"]) == 1
    assert main([]) == 1


def test_config_error_exits_one(tmp_path, capsys):
    code, _ = run(tmp_path, "simulate", "--set", "family.name=unknown")
    assert code == 1
    assert "config error" in capsys.readouterr().err
    code2, _ = run(tmp_path, "simulate", "--set", "nonsense")
    assert code2 == 1
    code3, _ = run(tmp_path, "simulate", "--set", "family.bogus_key=3")
    assert code3 == 1


def test_threshold_failure_exits_two(tmp_path):
    code, _ = run(
        tmp_path, "time-change",
        "--set", "estimator.n_paths=1500", "--set", "sim.n_steps=50",
        "--set", "estimator.ks_pvalue_min=0.9999",
    )
    assert code == 2


def test_simulate_outputs(tmp_path):
    code, out = run(
        tmp_path, "simulate",
        "--set", "estimator.n_paths=500", "--set", "sim.n_steps=50",
    )
    assert code == 0
    term = (out / "simulate_terminal.csv").read_text().splitlines()
    assert term[0] == "path_index,chart,x1,x2,distance_from_start"
    assert len(term) == 501
    path0 = (out / "simulate_path0.csv").read_text().splitlines()
    assert path0[0].startswith("step,s,metric_t,chart")
    assert (out / "simulate_distance_hist.png").exists()


def test_equivalence_convergence_csv(tmp_path):
    code, out = run(
        tmp_path, "equivalence",
        "--set", "family.kappa=1.0", "--set", "sim.t_horizon=0.5",
        "--set", "sim.n_steps=100", "--set", "estimator.n_paths=50",
    )
    assert code == 0
    rows = (out / "equivalence_convergence.csv").read_text().splitlines()
    assert rows[0] == "dt,gap_w,gap_tx"
    assert len(rows) == 3  # one row per dt


def test_qv_csv_schema(tmp_path):
    code, out = run(
        tmp_path, "martingale-l",
        "--set", "family.name=euclidean", "--set", "family.periodic=true",
        "--set", "sim.t_horizon=0.3", "--set", "sim.n_steps=30",
        "--set", "sim.direction=reversed", "--set", "estimator.n_paths=50",
    )
    assert code == 0
    rows = (out / "martingale_l_qv.csv").read_text().splitlines()
    assert rows[0] == "t,realized_qv,predicted_qv"


def test_bitwise_reproducibility_and_seed(tmp_path):
    args = ["time-change", "--set", "estimator.n_paths=800", "--set", "sim.n_steps=40"]
    c1 = main(args + ["--out", str(tmp_path / "a")])
    c2 = main(args + ["--out", str(tmp_path / "b")])
    assert c1 == 0 and c2 == 0
    ra = (tmp_path / "a" / "time_change_report.json").read_bytes()
    rb = (tmp_path / "b" / "time_change_report.json").read_bytes()
    assert ra == rb
    ca = (tmp_path / "a" / "time_change_ks.csv").read_bytes()
    cb = (tmp_path / "b" / "time_change_ks.csv").read_bytes()
    assert ca == cb
    c3 = main(args + ["--out", str(tmp_path / "c"), "--seed", "777"])
    assert c3 == 0
    rc = (tmp_path / "c" / "time_change_report.json").read_bytes()
    assert rc != ra


def test_config_file_and_overrides(tmp_path):
    cfg_file = tmp_path / "exp.ini"
    cfg_file.write_text(
        "[family]\nname = hyperbolic\nkappa = 2.0\n\n"
        "[sim]\nt_horizon = 0.3\nn_steps = 60\nseed = 5\n\n"
        "[estimator]\nn_paths = 900\n"
    )
    cfg = load_config(cfg_file)
    assert cfg.get_str("family", "name") == "hyperbolic"
    assert cfg.get_int("estimator", "n_paths") == 900
    apply_overrides(cfg, ["estimator.n_paths=50"])
    assert cfg.get_int("estimator", "n_paths") == 50
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["no-dots"])
    with pytest.raises(ConfigError):
        cfg._merge("nosuch", {"a": "1"})

    code = main(["time-change", "--config", str(cfg_file), "--out", str(tmp_path / "o")])
    assert code == 0


def test_config_typed_accessors():
    cfg = ExperimentConfig()
    assert cfg.get_bool("output", "csv") is True
    assert cfg.get_vector("sim", "x0").tolist() == [0.0, 0.0]
    assert len(cfg.get_points("estimator", "sample_points")) == 5
    assert cfg.get_coeffs("estimator", "coeffs") == {"z": 1.0}
    apply_overrides(cfg, ["sim.t_horizon=abc"])
    with pytest.raises(ConfigError):
        cfg.get_float("sim", "t_horizon")
    with pytest.raises(ConfigError):
        cfg.get_bool("output", "dir")
    with pytest.raises(ConfigError):
        cfg.get_int("experiment", "name")


def test_nrf_solve_writes_snapshot(tmp_path):
    code, out = run(
        tmp_path, "nrf-solve",
        "--set", "nrf.grid_n=32", "--set", "nrf.t_end=0.1",
        "--set", "nrf.dt=5e-4", "--set", "nrf.n_store=11",
    )
    assert code == 0
    assert (out / "nrf_snapshot.npz").exists()
    assert (out / "nrf_fields.png").exists()
    rows = (out / "nrf_solve_trace.csv").read_text().splitlines()
    assert rows[0] == "t,volume,r_avg,max_abs_u"

    # reuse the snapshot through --snapshot for a dependent subcommand
    code2 = main([
        "simulate", "--snapshot", str(out / "nrf_snapshot.npz"),
        "--set", "family.name=torus_nrf", "--set", "sim.t_horizon=0.05",
        "--set", "sim.n_steps=20", "--set", "estimator.n_paths=100",
        "--set", "sim.x0=3.0 3.0", "--out", str(tmp_path / "sim2"),
    ])
    assert code2 == 0


def test_scaling_subcommand(tmp_path):
    code, out = run(
        tmp_path, "scaling",
        "--set", "estimator.n_paths=1500", "--set", "sim.n_steps=60",
        "--set", "sim.x0=0.3 0.1",
    )
    assert code == 0
    assert (out / "scaling_cdf.png").exists()
