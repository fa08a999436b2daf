"""Command-line entry point.

    transtab <command> --config <file.json> [--set key=value]... [--jobs N]

Commands: simulate, field, ridge, monitor, equilibria.  Exit status is 0 on
success (an unstable verdict is a result), 1 for configuration errors and
2 for numerical failures.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import fieldscan as fs
from . import models
from . import monitor as mon
from .dynamics import IntegratorConfig, integrate
from .errors import (AllCellsFailed, ConfigError, NoConvergence, NonFiniteState, ParseError,
                     TranstabError)

COMMANDS = ("simulate", "field", "ridge", "monitor", "equilibria")

DEFAULTS = {
    "integrator": {"h": 1e-3, "jacobian_mode": "variational", "fd_epsilon": 1e-6},
    "output": {"dir": "."},
    "seed": 0,
}
COMMAND_DEFAULTS = {
    "simulate": {"simulate": {"t_end": 10.0}},
    "field": {"quantity": "rho", "ridge": {"threshold": 1.0}},
    "ridge": {"quantity": "rho", "ridge": {"threshold": 1.0, "validity": False}},
    "monitor": {"monitor": {"horizon": 10.0, "sample_every": None, "delay": 1.5,
                            "eps_v": mon.EPS_V, "n_hold": mon.N_HOLD,
                            "theta_floor": mon.THETA_FLOOR, "quotient": True,
                            "chained": False, "model_based": True}},
    "equilibria": {"equilibria": {"tol": 1e-10, "max_iter": 200, "dedupe_tol": 1e-6}},
}


class NumericalFailure(Exception):
    pass


def deep_merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_set(cfg, assignment):
    """Apply one ``a.b.c=value`` override; the value is parsed as JSON when
    possible and kept as a string otherwise."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.strip().split(".")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value
    return cfg


def load_config(path, command, sets=()):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    if raw.get("command", command) != command:
        raise ConfigError(f"config {path} is for {raw['command']!r}, not {command!r}")
    for s in sets:
        apply_set(raw, s)
    cfg = deep_merge(deep_merge(DEFAULTS, COMMAND_DEFAULTS[command]), raw)
    cfg["command"] = command
    return cfg


def _integrator(cfg):
    try:
        return IntegratorConfig(**cfg["integrator"])
    except TypeError as exc:
        raise ConfigError(f"bad integrator block: {exc}") from exc


def _state(value, vf, base_dir, what):
    """A state vector, or ``"equilibrium"`` for the parameter file's equilibrium."""
    if isinstance(value, str):
        if value != "equilibrium":
            raise ConfigError(f"{what} must be a list of numbers or 'equilibrium'")
        return _file_equilibrium(vf, base_dir)
    x = np.asarray(value, dtype=float)
    if x.shape != (vf.dim,) or not np.all(np.isfinite(x)):
        raise ConfigError(f"{what} must be a finite vector of length {vf.dim}")
    return x


def _file_equilibrium(vf, base_dir):
    src = _model_block_cache.get(id(vf))
    if not src or "file" not in src:
        raise ConfigError("'equilibrium' needs a model block with a parameter file")
    doc, _ = models.load_params_file(src["file"], base_dir)
    eq = doc.get("equilibrium")
    if not eq:
        raise ConfigError(f"parameter file {src['file']!r} records no equilibrium")
    x = np.concatenate([eq["delta"], eq.get("omega", [0.0] * len(eq["delta"]))])
    if x.shape != (vf.dim,):
        raise ConfigError("recorded equilibrium does not match the model dimension")
    return x


_model_block_cache = {}


def _field(block, base_dir):
    vf = models.build_field(block, base_dir)
    _model_block_cache[id(vf)] = block
    return vf


def _outdir(cfg):
    out = Path(cfg["output"]["dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _scenario(cfg, vf, base_dir):
    """Optional fault staging: ``{"fault": {...}, "t_F", "t_P", "x_I"}``."""
    sc = cfg.get("scenario")
    if not sc:
        return None
    try:
        during_block = {**cfg["model"], "fault": sc["fault"]}
        during = _field(during_block, base_dir)
        post = _field({**cfg["model"], **sc["post"]}, base_dir) if "post" in sc else vf
        x_I = _state(sc.get("x_I", "equilibrium"), vf, base_dir, "scenario.x_I")
        return models.FaultScenario(vf, during, post, float(sc.get("t_F", 0.0)),
                                    float(sc["t_P"]), x_I)
    except KeyError as exc:
        raise ConfigError(f"scenario block is missing {exc}") from exc


# -- commands ------------------------------------------------------------------

def cmd_simulate(cfg, base_dir, jobs):
    vf = _field(cfg["model"], base_dir)
    icfg = _integrator(cfg)
    out = _outdir(cfg)
    sim = cfg["simulate"]
    t_end = float(sim["t_end"])
    sc = _scenario(cfg, vf, base_dir)
    if sc is None:
        x0 = _state(sim.get("x0"), vf, base_dir, "simulate.x0")
        run = lambda: integrate(vf, x0, t_end, icfg)
    else:
        run = lambda: models.fault_trajectory(sc, t_end, icfg)[0]
    yield
    traj = run()
    mon.write_series_csv(out / "trajectory.csv", traj.times, traj.states)


def _grid_setup(cfg, base_dir):
    vf = _field(cfg["model"], base_dir)
    icfg = _integrator(cfg)
    try:
        spec = fs.GridSpec.from_dict(cfg["grid"])
    except KeyError as exc:
        raise ConfigError(f"config needs a 'grid' block ({exc})") from exc
    if spec.base_point.shape[0] != vf.dim:
        raise ConfigError("grid.base_point does not match the model dimension")
    quantity = cfg["quantity"]
    if quantity not in fs.QUANTITIES:
        raise ConfigError(f"quantity must be one of {fs.QUANTITIES}")
    windows = cfg["grid"].get("windows") or [spec.window]
    windows = [float(w) for w in windows]
    if any(w == 0 for w in windows) or len({math.copysign(1, w) for w in windows}) != 1:
        raise ConfigError("grid.windows must be non-zero and share a sign")
    return vf, icfg, spec, quantity, windows


def _field_name(windows, w):
    return "field.csv" if len(windows) == 1 else f"field_T{abs(w):g}.csv"


def cmd_field(cfg, base_dir, jobs):
    vf, icfg, spec, quantity, windows = _grid_setup(cfg, base_dir)
    threshold = float(cfg["ridge"]["threshold"])
    out = _outdir(cfg)
    yield
    grids = fs.scan_fields(vf, spec, windows, quantity, icfg, jobs=jobs)
    for w, g in zip(windows, grids):
        g.ridge_mask = fs.extract_ridges(g, threshold).mask
        fs.write_field_csv(g, out / _field_name(windows, w), {"threshold": threshold})


def cmd_ridge(cfg, base_dir, jobs):
    vf, icfg, spec, quantity, windows = _grid_setup(cfg, base_dir)
    threshold = float(cfg["ridge"]["threshold"])
    validity = bool(cfg["ridge"].get("validity"))
    out = _outdir(cfg)
    yield
    grids = fs.scan_fields(vf, spec, windows, quantity, icfg, jobs=jobs)
    result = []
    for w, g in zip(windows, grids):
        r = fs.extract_ridges(g, threshold)
        g.ridge_mask = r.mask
        comps = []
        for cells in r.components:
            entry = {"size": int(len(cells)), "cells": cells.tolist(),
                     "coords": [[float(spec.coords_i[i]), float(spec.coords_j[j])]
                                for i, j in cells]}
            if validity:
                checks = [fs.ftle_ridge_validity(vf, tuple(c), g, icfg) for c in cells]
                entry["valid"] = [c.valid for c in checks]
                entry["reasons"] = [list(c.reasons) for c in checks]
            comps.append(entry)
        result.append({"window": w, "threshold": threshold, "quantity": quantity,
                       "ridge_cells": int(r.mask.sum()), "components": comps,
                       "unchecked": list(fs.RidgeValidity(True, ()).unchecked) if validity else []})
    _write_json(out / "ridges.json", {"model": vf.spec.get("id", vf.name), "ridges": result})


def cmd_monitor(cfg, base_dir, jobs):
    m = cfg["monitor"]
    icfg = _integrator(cfg)
    horizon = float(m["horizon"])
    if not horizon > 0:
        raise ConfigError("monitor.horizon must be positive")
    delay = float(m["delay"])
    n_hold = int(m["n_hold"])
    series = None
    if m.get("series"):
        spath = Path(m["series"])
        if not spath.is_absolute():
            spath = base_dir / spath
        if not spath.exists():
            raise ConfigError(f"time series file {spath} does not exist")
        series = mon.ingest_series(spath, delay, m.get("schema"))
    vf = x_P = sc = None
    if "model" in cfg:
        vf = _field(cfg["model"], base_dir)
        sc = _scenario(cfg, vf, base_dir)
        if sc is None:
            x_P = _state(m.get("x_P"), vf, base_dir, "monitor.x_P")
    elif series is None:
        raise ConfigError("monitor needs a model block or a monitor.series file")
    out = _outdir(cfg)
    yield
    if vf is not None and sc is not None:
        _, x_P = models.fault_trajectory(sc, sc.t_P, icfg)
    cert = None
    if vf is not None and m["model_based"]:
        cert = mon.certificate_rho(vf, x_P, horizon, m["sample_every"], icfg,
                                   eps_v=float(m["eps_v"]), n_hold=n_hold,
                                   quotient=bool(m["quotient"]), chained=bool(m["chained"]))
    if series is None:
        traj = integrate(vf, x_P, horizon + delay, icfg)
        series = mon.TimeSeriesWindow(traj.times, traj.states, delay)
        mon.write_series_csv(out / "trajectory.csv", traj.times, traj.states)
    lt, lam = mon.model_free_le_series(series)
    lev = mon.le_verdict(lt, lam, n_hold, float(m["theta_floor"]))
    rows = mon.merge_certificates(cert, lt, lam, n_hold, float(m["theta_floor"]))
    mon.write_certificate_csv(out / "certificate.csv", rows)
    summary = {"le_verdict": lev.verdict, "margin_theta": lev.margin_theta}
    if cert is not None:
        summary.update({"rho_verdict": cert.final_verdict, "gamma": float(cert.gamma[-1]),
                        "margin_gamma": float(cert.margin[-1]), "blowup_time": cert.blowup_time})
    _write_json(out / "summary.json", summary)


def cmd_equilibria(cfg, base_dir, jobs):
    vf = _field(cfg["model"], base_dir)
    e = cfg["equilibria"]
    guesses = e.get("guesses")
    if not guesses:
        raise ConfigError("equilibria.guesses must list at least one initial guess")
    guesses = [_state(g, vf, base_dir, "equilibria.guesses[]") for g in guesses]
    out = _outdir(cfg)
    yield
    found = []
    for g in guesses:
        info = models.find_equilibrium(vf, g, tol=float(e["tol"]), max_iter=int(e["max_iter"]))
        if all(np.max(np.abs(info.x_star - f.x_star)) > float(e["dedupe_tol"]) for f in found):
            found.append(info)
    _write_json(out / "equilibria.json", {"model": vf.spec.get("id", vf.name),
                                          "equilibria": [f.to_dict() for f in found]})


HANDLERS = {"simulate": cmd_simulate, "field": cmd_field, "ridge": cmd_ridge,
            "monitor": cmd_monitor, "equilibria": cmd_equilibria}


def run(command, config_path, sets=(), jobs=None):
    """Run a command; returns the resolved config.  Raises ``ConfigError``
    for invalid input and ``NumericalFailure`` for numerical failures."""
    cfg = load_config(config_path, command, sets)
    base_dir = Path(config_path).resolve().parent
    jobs = jobs if jobs is not None else os.cpu_count() or 1
    if "model" not in cfg and command != "monitor":
        raise ConfigError("config needs a 'model' block")
    _model_block_cache.clear()
    try:
        steps = HANDLERS[command](cfg, base_dir, jobs)
        next(steps)  # validation phase
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from exc
    _write_json(Path(cfg["output"]["dir"]) / "resolved_config.json", cfg)
    try:
        next(steps, None)
    except (AllCellsFailed, NonFiniteState, NoConvergence) as exc:
        raise NumericalFailure(str(exc)) from exc
    except ParseError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def main(argv=None):
    ap = argparse.ArgumentParser(prog="transtab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config entry by dotted path (repeatable)")
    ap.add_argument("--jobs", type=int, default=None, help="worker threads (default: all cores)")
    args = ap.parse_args(argv)
    try:
        run(args.command, args.config, args.set, args.jobs)
    except (ConfigError, ParseError) as exc:
        print(f"transtab: config error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"transtab: numerical failure: {exc}", file=sys.stderr)
        return 2
    except TranstabError as exc:
        print(f"transtab: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
