import csv
import json
from pathlib import Path

import pytest

from dnlab import experiments as ex
from dnlab.cli import main

ROOT = Path(__file__).resolve().parents[1]
SMALL_SIM = {"simulate": {"ensemble_size": 1, "T": 0.25}}


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_shipped_default_config_matches_code():
    assert json.loads((ROOT / "configs" / "default.json").read_text()) == ex.DEFAULT_CONFIG


def test_default_config_printed(capsys):
    assert main(["default-config"]) == 0
    assert json.loads(capsys.readouterr().out) == ex.DEFAULT_CONFIG


def test_validate_default_passes(tmp_path, capsys):
    assert main(["validate-config", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "validation.csv")
    gap = next(r for r in rows if r["section"] == "model" and r["check"] == "noise.holder_gap")
    assert float(gap["margin"]) == pytest.approx(0.5 + 2 / 1.3 - 2)
    assert "margin" in capsys.readouterr().out


def test_validate_violation_exit_1(tmp_path):
    cfg = write_cfg(tmp_path, {"model": {"delta": 0.2}})
    assert main(["validate-config", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_violation_blocks_run_without_force(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"model": {"delta": 0.2}, **SMALL_SIM})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 1
    assert "--force" in capsys.readouterr().err
    assert not (tmp_path / "a" / "manifest.json").exists()


def test_force_records_violation(tmp_path):
    cfg = write_cfg(tmp_path, {"model": {"delta": 0.2}, **SMALL_SIM})
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--force"])
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["forced_violations"] == ["noise.holder_gap"]
    assert (tmp_path / "b" / "trajectory.csv").exists()


def test_branch_two_rows(tmp_path):
    assert main(["branch", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "branches.csv")
    assert [float(r["t_star"]) for r in rows] == [0.0, 1.0]
    for r in rows:
        assert float(r["pde_residual"]) < 1e-5
        assert float(r["I_value"]) < 0
    assert float(rows[1]["pairwise_distance"]) > 0


def test_simulate_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SIM)
    for d in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--seed", "99", "--out", str(tmp_path / d)]) == 0
    for name in ("trajectory.csv", "ensemble_summary.csv", "energy.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_changes_output(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SIM)
    main(["simulate", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() != (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, {**SMALL_SIM, "seed": 5})
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "c")])
    assert json.loads((tmp_path / "c" / "manifest.json").read_text())["seed"] == 5
    monkeypatch.setenv("DNL_SEED", "6")
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "e")])
    assert json.loads((tmp_path / "e" / "manifest.json").read_text())["seed"] == 6
    main(["simulate", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "f")])
    assert json.loads((tmp_path / "f" / "manifest.json").read_text())["seed"] == 7


def test_workers_do_not_change_output(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, {"simulate": {"ensemble_size": 70, "T": 0.125, "block_size": 16}})
    main(["simulate", "--config", str(cfg), "--workers", "1", "--out", str(tmp_path / "w1")])
    monkeypatch.setenv("DNL_WORKERS", "4")
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "w4")])
    for name in ("trajectory.csv", "ensemble_summary.csv", "energy.csv"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w4" / name).read_bytes()


def test_rerun_reproduces(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SIM)
    main(["simulate", "--config", str(cfg), "--seed", "11", "--out", str(tmp_path / "orig")])
    assert main(["rerun", str(tmp_path / "orig" / "manifest.json"), "--out", str(tmp_path / "again")]) == 0
    for name in ("trajectory.csv", "energy.csv"):
        assert (tmp_path / "orig" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()
    a = json.loads((tmp_path / "orig" / "manifest.json").read_text())
    b = json.loads((tmp_path / "again" / "manifest.json").read_text())
    assert a["config_hash"] == b["config_hash"] and a["seed"] == b["seed"]


def test_manifest_contents(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SIM)
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "m")])
    man = json.loads((tmp_path / "m" / "manifest.json").read_text())
    assert man["subcommand"] == "simulate"
    assert man["config"]["simulate"]["ensemble_size"] == 1
    assert man["config_hash"] == ex.config_hash(man["config"])


@pytest.mark.parametrize("argv", [
    [],
    ["nonsense"],
    ["simulate", "--workers", "many"],
    ["simulate", "--config", "/no/such/file.json"],
    ["simulate", "--seed", "-1"],
    ["rerun", "/no/such/manifest.json"],
])
def test_usage_errors(argv, tmp_path):
    assert main(argv + (["--out", str(tmp_path)] if argv[:1] == ["simulate"] else [])) == 2


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = write_cfg(tmp_path, {"simulate": {"ensemble": 3}})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "u")]) == 2


def test_malformed_config_is_usage_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "u")]) == 2


def test_bad_env_workers(tmp_path, monkeypatch):
    monkeypatch.setenv("DNL_WORKERS", "x")
    assert main(["simulate", "--out", str(tmp_path)]) == 2


def test_runtime_failure_exit_1(tmp_path, capsys):
    # T/dt not integral is caught when the simulation is configured
    cfg = write_cfg(tmp_path, {"simulate": {"ensemble_size": 1, "T": 0.3, "dt": 0.25}})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1
    assert "runtime failure" in capsys.readouterr().err


def test_version(capsys):
    assert main(["--version"]) == 0
    assert capsys.readouterr().out.startswith("dnlab ")
