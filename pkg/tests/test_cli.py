import json
import math
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from transtab import cli
from transtab import fieldscan as fs
from transtab import models
from transtab.dynamics import IntegratorConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run_cli(*args):
    return cli.main([str(a) for a in args])


def test_field_matches_library(tmp_path):
    rc = run_cli("field", "--config", CONFIGS / "saddle_field.json",
                 "--set", f"output.dir={tmp_path}")
    assert rc == 0
    g = fs.read_field_csv(tmp_path / "field.csv")
    cfg = json.loads((CONFIGS / "saddle_field.json").read_text())
    ref = fs.scan_field(models.saddle_field(), fs.GridSpec.from_dict(cfg["grid"]), "rho",
                        IntegratorConfig(h=1e-3))
    assert np.array_equal(g.values, ref.values)
    np.testing.assert_allclose(g.values, math.e, rtol=1e-8)
    assert (tmp_path / "field.csv.json").exists()
    resolved = json.loads((tmp_path / "resolved_config.json").read_text())
    assert resolved["integrator"]["h"] == 1e-3 and resolved["command"] == "field"


def test_equilibria(tmp_path):
    rc = run_cli("equilibria", "--config", CONFIGS / "single_machine_equilibria.json",
                 "--set", f"output.dir={tmp_path}")
    assert rc == 0
    eqs = json.loads((tmp_path / "equilibria.json").read_text())["equilibria"]
    kinds = {e["kind"]: e["x_star"][0] for e in eqs}
    assert kinds["stable"] == pytest.approx(math.pi / 6, abs=1e-9)
    assert kinds["saddle(1)"] == pytest.approx(5 * math.pi / 6, abs=1e-9)


def test_equilibria_dedupe(tmp_path):
    rc = run_cli("equilibria", "--config", CONFIGS / "single_machine_equilibria.json",
                 "--set", f"output.dir={tmp_path}",
                 "--set", "equilibria.guesses=[[0.4,0],[0.6,0],[2.5,0]]")
    assert rc == 0
    assert len(json.loads((tmp_path / "equilibria.json").read_text())["equilibria"]) == 2


def test_missing_series_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps({"command": "monitor",
                               "monitor": {"series": "nowhere/series.csv"},
                               "output": {"dir": str(tmp_path / "out")}}))
    assert run_cli("monitor", "--config", cfg) == 1
    err = capsys.readouterr().err
    assert "nowhere/series.csv" in err


def test_bad_configs(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli("field", "--config", bad) == 1
    assert run_cli("field", "--config", tmp_path / "absent.json") == 1
    assert run_cli("simulate", "--config", CONFIGS / "saddle_field.json") == 1
    assert run_cli("field", "--config", CONFIGS / "saddle_field.json",
                   "--set", f"output.dir={tmp_path}", "--set", "quantity=curl") == 1
    assert run_cli("field", "--config", CONFIGS / "saddle_field.json",
                   "--set", f"output.dir={tmp_path}", "--set", "grid.window=0") == 1


def test_set_overrides(tmp_path):
    rc = run_cli("field", "--config", CONFIGS / "saddle_field.json",
                 "--set", f"output.dir={tmp_path}", "--set", "grid.resolution=[5,7]",
                 "--set", "grid.normal_mode=max_stretch", "--set", "grid.normal=null",
                 "--set", "quantity=ftle")
    assert rc == 0
    g = fs.read_field_csv(tmp_path / "field.csv")
    assert g.values.shape == (5, 7) and g.quantity == "ftle"
    np.testing.assert_allclose(g.values, 1.0, rtol=1e-8)


def test_apply_set_parsing():
    cfg = {}
    cli.apply_set(cfg, "a.b=3")
    cli.apply_set(cfg, "a.c=hello")
    cli.apply_set(cfg, "d=[1, 2]")
    assert cfg == {"a": {"b": 3, "c": "hello"}, "d": [1, 2]}
    with pytest.raises(Exception):
        cli.apply_set(cfg, "novalue")


def test_reproducible_from_resolved_config(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("field", "--config", CONFIGS / "saddle_field.json",
                   "--set", f"output.dir={a}", "--set", "grid.resolution=[9,9]",
                   "--set", "grid.window=2.0") == 0
    resolved = a / "resolved_config.json"
    assert run_cli("field", "--config", resolved, "--set", f"output.dir={b}",
                   "--jobs", "1") == 0
    assert (a / "field.csv").read_bytes() == (b / "field.csv").read_bytes()
    ma = json.loads((a / "field.csv.json").read_text())
    mb = json.loads((b / "field.csv.json").read_text())
    ma.pop("created")
    mb.pop("created")
    assert ma == mb


def test_all_cells_failed_exit_code(tmp_path, capsys):
    cfg = tmp_path / "f.json"
    cfg.write_text(json.dumps({
        "command": "field",
        "model": {"id": "affine", "params": {"A": [[5.0, 0.0], [0.0, 5.0]]}},
        "integrator": {"h": 0.01},
        "grid": {"axis_i": 0, "axis_j": 1, "range_i": [1, 2], "range_j": [1, 2],
                 "resolution": [3, 3], "base_point": [0, 0], "window": 8.0},
        "output": {"dir": str(tmp_path / "out")}}))
    assert run_cli("field", "--config", cfg) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_simulate_and_series_monitor(tmp_path):
    sim = tmp_path / "sim"
    assert run_cli("simulate", "--config", CONFIGS / "two_gen_simulate.json",
                   "--set", f"output.dir={sim}", "--set", "integrator.h=0.01",
                   "--set", "simulate.t_end=12") == 0
    traj = sim / "trajectory.csv"
    assert traj.exists()
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps({"command": "monitor",
                               "monitor": {"series": str(traj), "delay": 1.5},
                               "output": {"dir": str(tmp_path / "mon")}}))
    assert run_cli("monitor", "--config", cfg) == 0
    summary = json.loads((tmp_path / "mon" / "summary.json").read_text())
    assert "le_verdict" in summary and "rho_verdict" not in summary


def test_ridge_command(tmp_path):
    assert run_cli("ridge", "--config", CONFIGS / "two_gen_ridges_T35.json",
                   "--set", f"output.dir={tmp_path}", "--set", "grid.resolution=[61,61]",
                   "--set", "grid.window=10", "--set", "ridge.validity=true") == 0
    doc = json.loads((tmp_path / "ridges.json").read_text())
    r = doc["ridges"][0]
    assert r["ridge_cells"] > 0 and r["unchecked"]
    assert all(len(c["valid"]) == c["size"] for c in r["components"])


@pytest.mark.parametrize("name,verdict", [("ne39_stable_monitor", "stable"),
                                          ("ne39_unstable_monitor", "unstable")])
def test_monitor_examples(tmp_path, name, verdict):
    assert run_cli("monitor", "--config", CONFIGS / f"{name}.json",
                   "--set", f"output.dir={tmp_path}", "--set", "monitor.horizon=8") == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["rho_verdict"] == verdict and s["le_verdict"] == verdict
    lines = (tmp_path / "certificate.csv").read_text().splitlines()
    assert lines[0].startswith("t,rho,lambda,gamma")


@pytest.mark.skipif(shutil.which("transtab") is None, reason="console script not installed")
def test_console_script(tmp_path):
    p = subprocess.run(["transtab", "equilibria", "--config",
                        str(CONFIGS / "single_machine_equilibria.json"),
                        "--set", f"output.dir={tmp_path}"], capture_output=True, text=True)
    assert p.returncode == 0, p.stderr


def test_module_entry(tmp_path):
    p = subprocess.run([sys.executable, "-m", "transtab.cli", "equilibria", "--config",
                        str(CONFIGS / "single_machine_equilibria.json"),
                        "--set", f"output.dir={tmp_path}"], capture_output=True, text=True)
    assert p.returncode == 0, p.stderr
