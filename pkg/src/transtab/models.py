"""Concrete vector fields, fault staging and equilibrium analysis.

Parameter packing for the kernel-backed kinds (flat float64 vectors):

* affine  ``[n, A (n*n, row-major), b (n)]``, field ``A x + b``
* swing   ``[m, P (m), D (m), E (m+1), Y ((m+1)**2)]``, reference machine last
* network ``[m, pi*f_s/H (m), D (m), P_m (m), E (m), G (m*m), B (m*m)]``

States of the swing models are ``[delta_1..delta_m, omega_1..omega_m]``.
Angles are never wrapped during integration.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import (IntegratorConfig, Trajectory, VectorField, as_state, integrate)
from .errors import ConfigError, DimensionMismatch, NoConvergence
from ._kernels_numpy import AFFINE, NETWORK, SWING

DATA_ENV = "TRANSTAB_DATA_DIR"


def _array(v, name, shape=None):
    a = np.array(v, dtype=float)
    if shape is not None and a.shape != shape:
        raise DimensionMismatch(f"{name} has shape {a.shape}, expected {shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


# -- parameter types ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SwingParams:
    """Classical swing model with ``n_gen`` machines plus a fixed reference.

    ``E`` and ``Y`` include the reference machine as the last entry/row; its
    angle is 0 and, by convention, ``E[-1] = 1``.
    """
    P: np.ndarray
    D: np.ndarray
    E: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(self.P).shape[0]
        object.__setattr__(self, "P", _array(np.atleast_1d(self.P), "P", (m,)))
        object.__setattr__(self, "D", _array(np.atleast_1d(self.D), "D", (m,)))
        object.__setattr__(self, "E", _array(np.atleast_1d(self.E), "E", (m + 1,)))
        object.__setattr__(self, "Y", _array(np.atleast_2d(self.Y), "Y", (m + 1, m + 1)))
        if not np.allclose(self.Y, self.Y.T, rtol=0, atol=1e-12):
            raise ValueError("Y must be symmetric")
        if np.any(self.D < 0):
            raise ValueError("damping D must be non-negative")
        if np.any(self.E <= 0):
            raise ValueError("voltages E must be positive")

    @property
    def n_gen(self):
        return self.P.shape[0]

    @classmethod
    def single_machine(cls, P, D, E=1.0, Y=1.0):
        """One machine against the reference: ``E=(E, 1)``, ``Y_12 = Y``."""
        return cls(P=[P], D=[D], E=[E, 1.0], Y=[[0.0, Y], [Y, 0.0]])

    def to_dict(self):
        return {"P": self.P.tolist(), "D": self.D.tolist(), "E": self.E.tolist(),
                "Y": self.Y.tolist()}


@dataclass(frozen=True, eq=False)
class NetworkSwingParams:
    """Network-reduced swing model (all machines carry state, no reference)."""
    H: np.ndarray
    f_s: float
    D: np.ndarray
    P_m: np.ndarray
    E: np.ndarray
    G: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(self.H).shape[0]
        object.__setattr__(self, "H", _array(np.atleast_1d(self.H), "H", (m,)))
        object.__setattr__(self, "D", _array(np.broadcast_to(self.D, (m,)), "D", (m,)))
        object.__setattr__(self, "P_m", _array(self.P_m, "P_m", (m,)))
        object.__setattr__(self, "E", _array(self.E, "E", (m,)))
        object.__setattr__(self, "G", _array(self.G, "G", (m, m)))
        object.__setattr__(self, "B", _array(self.B, "B", (m, m)))
        if np.any(self.H <= 0):
            raise ValueError("inertia constants H must be positive")
        if not self.f_s > 0:
            raise ValueError("synchronous frequency f_s must be positive")
        if np.any(self.D < 0):
            raise ValueError("damping D must be non-negative")

    @property
    def n_gen(self):
        return self.H.shape[0]

    def to_dict(self):
        return {"H": self.H.tolist(), "f_s": float(self.f_s), "D": self.D.tolist(),
                "P_m": self.P_m.tolist(), "E": self.E.tolist(),
                "G": self.G.tolist(), "B": self.B.tolist()}


# -- vector fields -----------------------------------------------------------

def affine_field(A, b=None, name="affine", spec=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatch(f"A must be square, got {A.shape}")
    b = np.zeros(n) if b is None else _array(b, "b", (n,))
    p = np.concatenate([[n], A.ravel(), b])
    if spec is None:
        spec = {"id": "affine", "params": {"A": A.tolist(), "b": b.tolist()}}
    return VectorField(dim=n, name=name, kind=AFFINE, params=p, spec=spec)


def saddle_field():
    """``x' = x, y' = -y``: stable manifold is the y-axis, unstable the x-axis."""
    return affine_field(np.diag([1.0, -1.0]), name="saddle", spec={"id": "saddle"})


def contraction_field():
    return affine_field(-np.eye(2), name="contraction", spec={"id": "contraction"})


def rotation_field():
    return affine_field([[0.0, -1.0], [1.0, 0.0]], name="rotation", spec={"id": "rotation"})


def classical_swing_field(p: SwingParams):
    m = p.n_gen
    packed = np.concatenate([[m], p.P, p.D, p.E, p.Y.ravel()])
    return VectorField(dim=2 * m, name=f"swing{m}", kind=SWING, params=packed,
                       spec={"id": "classical_swing", "params": p.to_dict()})


def network_swing_field(p: NetworkSwingParams):
    """``omega_i' = (pi f_s / H_i) [-D_i w_i + P_mi - G_ii E_i^2 - sum_j ...]``.

    The field depends on angle differences only, so a common shift of all
    angles is recorded as its symmetry direction.
    """
    m = p.n_gen
    c = math.pi * p.f_s / p.H
    packed = np.concatenate([[m], c, p.D, p.P_m, p.E, p.G.ravel(), p.B.ravel()])
    sym = np.zeros((2 * m, 1))
    sym[:m, 0] = 1.0 / math.sqrt(m)
    return VectorField(dim=2 * m, name=f"network{m}", kind=NETWORK, params=packed,
                       symmetry=sym, spec={"id": "network_swing", "params": p.to_dict()})


# -- parameter files -----------------------------------------------------------

def data_path(name, base_dir=None):
    """Resolve a parameter file: absolute, then ``base_dir``, then
    ``$TRANSTAB_DATA_DIR``, then the bundled data directory."""
    cand = Path(name)
    if cand.is_absolute():
        return cand
    search = []
    if base_dir is not None:
        search.append(Path(base_dir) / cand)
    env = os.environ.get(DATA_ENV)
    if env:
        search.append(Path(env) / cand)
    search.append(Path(str(resources.files("transtab") / "data")) / cand)
    for path in search:
        if path.exists():
            return path
    raise ConfigError(f"parameter file {name!r} not found (searched: "
                      + ", ".join(str(s) for s in search) + ")")


def load_params_file(name, base_dir=None):
    path = data_path(name, base_dir)
    try:
        with open(path) as fh:
            return json.load(fh), path
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read parameter file {path}: {exc}") from exc


def _apply_fault(params, fault):
    """Fault modifications on a parameter dict (returns a new dict)."""
    params = dict(params)
    if not fault:
        return params
    if "Y_scale" in fault:
        params["Y"] = (np.asarray(params["Y"], dtype=float) * float(fault["Y_scale"])).tolist()
    if "isolate" in fault:
        G = np.array(params["G"], dtype=float)
        B = np.array(params["B"], dtype=float)
        for k in fault["isolate"]:
            G[k, :] = G[:, k] = 0.0
            B[k, :] = B[:, k] = 0.0
        params["G"], params["B"] = G.tolist(), B.tolist()
    unknown = set(fault) - {"Y_scale", "isolate"}
    if unknown:
        raise ConfigError(f"unknown fault keys: {sorted(unknown)}")
    return params


def build_field(block, base_dir=None):
    """Build a vector field from a model block.

    A block is ``{"id": ..., "params": {...}}`` or ``{"id": ..., "file": ...}``,
    optionally with ``"overrides"`` (replacing parameter entries; scalars
    broadcast over machines) and ``"fault"`` (``Y_scale`` for the classical
    model, ``isolate: [k, ...]`` for the network model).
    """
    if not isinstance(block, dict) or "id" not in block:
        raise ConfigError("model block needs an 'id'")
    mid = block["id"]
    if mid == "saddle":
        return saddle_field()
    if mid == "contraction":
        return contraction_field()
    if mid == "rotation":
        return rotation_field()
    params = dict(block.get("params", {}))
    if "file" in block:
        doc, _ = load_params_file(block["file"], base_dir)
        if doc.get("model", mid) != mid:
            raise ConfigError(f"file {block['file']!r} holds a {doc.get('model')!r} model, not {mid!r}")
        params = {**doc["params"], **params}
    for key, val in block.get("overrides", {}).items():
        if key not in params and mid != "affine":
            raise ConfigError(f"override of unknown parameter {key!r}")
        if np.isscalar(val) and key in params and np.ndim(params[key]) == 1:
            val = [float(val)] * len(params[key])
        params[key] = val
    params = _apply_fault(params, block.get("fault"))
    try:
        if mid == "affine":
            f = affine_field(params["A"], params.get("b"))
        elif mid == "classical_swing":
            f = classical_swing_field(SwingParams(**params))
        elif mid == "network_swing":
            f = network_swing_field(NetworkSwingParams(**params))
        else:
            raise ConfigError(f"unknown model id {mid!r}")
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad parameters for model {mid!r}: {exc}") from exc
    spec = {"id": mid, "params": {k: (np.asarray(v).tolist() if not np.isscalar(v) else v)
                                  for k, v in params.items()}}
    object.__setattr__(f, "spec", spec)
    return f


# -- fault staging -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FaultScenario:
    """Pre-fault, fault-on and post-fault dynamics with clearing times."""
    pre: VectorField
    during: VectorField
    post: VectorField
    t_F: float
    t_P: float
    x_I: np.ndarray
    equilibrium_tol: float = 1e-8

    def __post_init__(self):
        if self.t_P < self.t_F:
            raise ValueError("fault must clear after it starts (t_P >= t_F)")
        dims = {self.pre.dim, self.during.dim, self.post.dim}
        if len(dims) != 1:
            raise DimensionMismatch("pre, during and post fields must share a dimension")
        x = as_state(self.x_I, self.pre.dim)
        object.__setattr__(self, "x_I", x)
        res = np.linalg.norm(self.pre.eval(x))
        if res > self.equilibrium_tol:
            raise ValueError(f"x_I is not an equilibrium of the pre-fault field (|f| = {res:.3g})")


def fault_trajectory(sc: FaultScenario, t_end, cfg=IntegratorConfig()):
    """Stitched trajectory over ``[t_F, t_end]`` and the post-fault state x_P.

    The fault-on segment runs under ``sc.during`` from ``x_I`` for
    ``t_P - t_F``; the post-fault segment continues under ``sc.post``.
    """
    if t_end < sc.t_P:
        raise ValueError("t_end must not precede the clearing time t_P")
    fault = integrate(sc.during, sc.x_I, sc.t_P - sc.t_F, cfg)
    x_P = fault.final.copy()
    post = integrate(sc.post, x_P, t_end - sc.t_P, cfg)
    times = np.concatenate([sc.t_F + fault.times, sc.t_P + post.times[1:]])
    states = np.concatenate([fault.states, post.states[1:]])
    return Trajectory(times, states, cfg.h), x_P


# -- equilibria ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EquilibriumInfo:
    x_star: np.ndarray
    eigenvalues: np.ndarray
    kind: str
    unstable_count: int
    hyperbolic: bool
    residual: float
    iterations: int

    @property
    def is_type1_saddle(self):
        return self.kind == "saddle(1)"

    def to_dict(self):
        return {"x_star": self.x_star.tolist(),
                "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
                "kind": self.kind, "hyperbolic": bool(self.hyperbolic),
                "residual": float(self.residual), "iterations": int(self.iterations)}


def _spectrum(vf, x_star, zero_tol=1e-9):
    ev = np.linalg.eigvals(vf.jacobian(x_star))
    ev = ev[np.lexsort((ev.imag, -ev.real))]
    re = ev.real
    hyperbolic = bool(np.all(np.abs(re) >= zero_tol))
    k = int(np.sum(re >= zero_tol))
    if k == 0:
        kind = "stable"
    elif k == len(ev):
        kind = "unstable"
    else:
        kind = f"saddle({k})"
    return ev, kind, k, hyperbolic


def classify(vf, x_star, zero_tol=1e-9):
    """Eigenvalues of ``Jf(x_star)`` and the resulting equilibrium kind.

    Eigenvalues with real part within ``zero_tol`` of zero make the point
    non-hyperbolic; the kind counts only those with real part >= ``zero_tol``.
    Fields with a symmetry always carry such a neutral eigenvalue.
    """
    x_star = as_state(x_star, vf.dim)
    ev, kind, k, hyp = _spectrum(vf, x_star, zero_tol)
    res = float(np.linalg.norm(vf.eval(x_star)))
    return EquilibriumInfo(x_star.copy(), ev, kind, k, hyp, res, 0)


def find_equilibrium(vf, x_guess, tol=1e-10, max_iter=200, max_halvings=30):
    """Damped Newton iteration on ``f(x) = 0``.

    Steps solve ``Jf dx = -f`` in the least-squares sense (fields with a
    symmetry have singular Jacobians) and are halved up to ``max_halvings``
    times until ``|f|`` decreases.
    """
    x = as_state(x_guess, vf.dim).copy()
    fx = vf.eval(x)
    res = float(np.linalg.norm(fx))
    it = 0
    while res > tol:
        if it >= max_iter:
            raise NoConvergence(f"Newton did not converge in {max_iter} iterations "
                                f"(|f| = {res:.3g}); try a better guess")
        it += 1
        J = vf.jacobian(x)
        dx = np.linalg.lstsq(J, -fx, rcond=None)[0]
        lam = 1.0
        for _ in range(max_halvings + 1):
            trial = x + lam * dx
            ft = vf.eval(trial)
            rt = float(np.linalg.norm(ft))
            if rt < res:
                break
            lam *= 0.5
        else:
            raise NoConvergence(f"Newton stalled at |f| = {res:.3g} after {it} iterations")
        x, fx, res = trial, ft, rt
    ev, kind, k, hyp = _spectrum(vf, x)
    return EquilibriumInfo(x, ev, kind, k, hyp, res, it)


def trace_stable_manifold(vf, saddle: EquilibriumInfo, t_back, cfg=IntegratorConfig(),
                          offset=1e-6):
    """Both branches of a type-1 saddle's stable manifold in 2-D.

    Points offset by ``offset`` along the stable eigenvector are integrated
    backward for ``t_back``; returns a list of two ``(k, n)`` arrays.
    Integration stops early (keeping the finite part) if a branch blows up.
    """
    J = vf.jacobian(saddle.x_star)
    w, V = np.linalg.eig(J)
    stable = np.real(w) < 0
    if stable.sum() != vf.dim - 1:
        raise ValueError("stable manifold tracing needs a type-1 saddle")
    if vf.dim != 2:
        raise ValueError("stable manifold tracing is implemented for planar fields")
    v = np.real(V[:, np.argmin(np.real(w))])
    v /= np.linalg.norm(v)
    branches = []
    for s in (1.0, -1.0):
        x0 = saddle.x_star + s * offset * v
        hs_traj = _backward_until_finite(vf, x0, t_back, cfg)
        branches.append(hs_traj)
    return branches


def _backward_until_finite(vf, x0, t_back, cfg):
    from .dynamics import run_flow, step_plan
    hs, _, _ = step_plan([t_back], cfg.h)
    rec = np.arange(len(hs) + 1)
    fb = run_flow(vf, x0, hs, rec, sign=-1.0)
    return fb.x[0, :fb.nrec[0]]
