"""Scalar fields of repulsion rate or FTLE on 2-D grid slices, ridge
extraction, FTLE ridge validity checks, and the grid CSV format."""
from __future__ import annotations

import csv
import json
import math
import subprocess
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import kernels
from .dynamics import IntegratorConfig, as_state, flow_gradients
from .errors import AllCellsFailed, ConfigError, ParseError
from .hyperbolic import (cauchy_green, ftle_batch, rho_fixed_batch, rho_max_batch, spectra)

QUANTITIES = ("rho", "ftle")
CSV_COLUMNS = ["i", "j", "coord_i", "coord_j", "value", "failed", "ridge"]


@dataclass(frozen=True, eq=False)
class GridSpec:
    """A rectangular grid on the plane of state coordinates ``axis_i, axis_j``.

    ``base_point`` fixes every other coordinate.  ``window`` is the flow time
    (negative for backward).  ``normal`` is ``None`` for the max-stretch
    normal, or a fixed unit vector in state space.
    """
    axis_i: int
    axis_j: int
    range_i: tuple
    range_j: tuple
    resolution: tuple
    base_point: np.ndarray
    window: float
    normal: np.ndarray | None = None

    def __post_init__(self):
        base = as_state(self.base_point)
        object.__setattr__(self, "base_point", base)
        n = base.shape[0]
        ri = tuple(float(v) for v in self.range_i)
        rj = tuple(float(v) for v in self.range_j)
        res = tuple(int(v) for v in self.resolution)
        object.__setattr__(self, "range_i", ri)
        object.__setattr__(self, "range_j", rj)
        object.__setattr__(self, "resolution", res)
        if self.axis_i == self.axis_j:
            raise ValueError("slice axes must differ")
        if not (0 <= self.axis_i < n and 0 <= self.axis_j < n):
            raise ValueError(f"slice axes must index a {n}-dimensional state")
        if len(ri) != 2 or len(rj) != 2 or not (ri[0] < ri[1] and rj[0] < rj[1]):
            raise ValueError("each range must be [lo, hi] with lo < hi")
        if len(res) != 2 or min(res) < 2:
            raise ValueError("resolution must be two integers >= 2")
        if not math.isfinite(self.window) or self.window == 0:
            raise ValueError("window must be finite and non-zero")
        if self.normal is not None:
            nv = np.asarray(self.normal, dtype=float)
            if nv.shape != (n,) or not np.linalg.norm(nv) > 0:
                raise ValueError("fixed normal must be a non-zero state vector")
            object.__setattr__(self, "normal", nv / np.linalg.norm(nv))

    @property
    def normal_mode(self):
        return "max_stretch" if self.normal is None else "fixed"

    @property
    def coords_i(self):
        return np.linspace(self.range_i[0], self.range_i[1], self.resolution[0])

    @property
    def coords_j(self):
        return np.linspace(self.range_j[0], self.range_j[1], self.resolution[1])

    @property
    def spacing(self):
        return ((self.range_i[1] - self.range_i[0]) / (self.resolution[0] - 1),
                (self.range_j[1] - self.range_j[0]) / (self.resolution[1] - 1))

    def points(self):
        """All grid nodes as states, row-major in ``(i, j)``."""
        ci, cj = np.meshgrid(self.coords_i, self.coords_j, indexing="ij")
        X = np.repeat(self.base_point[None, :], ci.size, axis=0)
        X[:, self.axis_i] = ci.ravel()
        X[:, self.axis_j] = cj.ravel()
        return X

    def with_window(self, window):
        return replace(self, window=float(window))

    def to_dict(self):
        return {"axis_i": self.axis_i, "axis_j": self.axis_j,
                "range_i": list(self.range_i), "range_j": list(self.range_j),
                "resolution": list(self.resolution), "base_point": self.base_point.tolist(),
                "window": float(self.window),
                "normal_mode": self.normal_mode,
                "normal": None if self.normal is None else self.normal.tolist()}

    @classmethod
    def from_dict(cls, d):
        mode = d.get("normal_mode", "max_stretch")
        normal = d.get("normal")
        if mode == "max_stretch":
            normal = None
        elif mode != "fixed" or normal is None:
            raise ConfigError("normal_mode must be 'max_stretch' or 'fixed' with a 'normal'")
        try:
            return cls(int(d["axis_i"]), int(d["axis_j"]), d["range_i"], d["range_j"],
                       d["resolution"], d["base_point"], float(d["window"]), normal)
        except KeyError as exc:
            raise ConfigError(f"grid block is missing {exc}") from exc


@dataclass(eq=False)
class ScalarFieldGrid:
    """Values ``[i, j]`` at ``(coords_i[i], coords_j[j])``."""
    spec: GridSpec
    quantity: str
    values: np.ndarray
    failed_mask: np.ndarray
    ridge_mask: np.ndarray = None
    model_id: str = ""

    def __post_init__(self):
        if self.ridge_mask is None:
            self.ridge_mask = np.zeros(self.values.shape, dtype=bool)


def _evaluate(quantity, spec, F, logdet, window):
    lam, vec, _ = spectra(F, logdet)
    if quantity == "ftle":
        return ftle_batch(lam, window)
    if spec.normal is None:
        return rho_max_batch(lam)
    return rho_fixed_batch(lam, vec, spec.normal)


def scan_fields(vf, spec: GridSpec, windows, quantity="rho", cfg=IntegratorConfig(),
                jobs=None, backend=None):
    """Scan several windows of one sign in a single integration pass.

    Returns one :class:`ScalarFieldGrid` per window.  Cells whose trajectory
    leaves the finite range before a window are marked failed for it.
    """
    if quantity not in QUANTITIES:
        raise ValueError(f"quantity must be one of {QUANTITIES}")
    if spec.base_point.shape[0] != vf.dim:
        raise ValueError("grid base point does not match the field dimension")
    windows = [float(w) for w in np.atleast_1d(windows)]
    kernels.set_jobs(jobs)
    X = spec.points()
    batch = flow_gradients(vf, X, windows, cfg, backend=backend)
    shape = spec.resolution
    out = []
    for w, window in enumerate(windows):
        failed = batch.failed[:, w].copy()
        vals = np.full(X.shape[0], np.nan)
        ok = ~failed
        if np.any(ok):
            vals[ok] = _evaluate(quantity, spec, batch.grad[ok, w], batch.logdet[ok, w], window)
        failed |= ~np.isfinite(vals)
        vals[failed] = np.nan
        if np.all(failed):
            raise AllCellsFailed(f"every grid cell failed for window {window:g}; "
                                 "shorten the window or move the region")
        out.append(ScalarFieldGrid(spec.with_window(window), quantity, vals.reshape(shape),
                                   failed.reshape(shape), None, vf.spec.get("id", vf.name)))
    return out


def scan_field(vf, spec: GridSpec, quantity="rho", cfg=IntegratorConfig(), jobs=None,
               backend=None):
    """Evaluate ``quantity`` on every grid node for ``spec.window``."""
    return scan_fields(vf, spec, [spec.window], quantity, cfg, jobs, backend)[0]


# -- ridges --------------------------------------------------------------------

@dataclass
class Ridges:
    mask: np.ndarray
    components: list = field(default_factory=list)


def extract_ridges(grid: ScalarFieldGrid, threshold):
    """Cells above ``threshold`` that are strict maxima along either axis.

    A transverse maximum needs both neighbours along that axis present and
    not failed.  Components use 8-connectivity; each is an ``(k, 2)`` array of
    ``(i, j)`` indices.
    """
    v = np.where(grid.failed_mask, np.nan, grid.values)
    mask = np.zeros(v.shape, dtype=bool)
    with np.errstate(invalid="ignore"):
        c = v[1:-1, :]
        along_i = (c > v[:-2, :]) & (c > v[2:, :])
        mask[1:-1, :] |= along_i
        c = v[:, 1:-1]
        along_j = (c > v[:, :-2]) & (c > v[:, 2:])
        mask[:, 1:-1] |= along_j
        mask &= v > threshold
    mask &= ~grid.failed_mask
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    comps = [np.argwhere(labels == k + 1) for k in range(count)]
    return Ridges(mask, comps)


def ridge_tangent(spec: GridSpec, ridge_mask, cell, radius=2):
    """Unit state-space tangent of the ridge at ``cell`` or ``None``.

    Principal direction of nearby ridge cells (Chebyshev radius ``radius``,
    same 8-connected component) in physical slice coordinates.
    """
    labels, _ = ndimage.label(ridge_mask, structure=np.ones((3, 3), dtype=int))
    i, j = cell
    lab = labels[i, j]
    if lab == 0:
        return None
    lo_i, hi_i = max(0, i - radius), min(ridge_mask.shape[0], i + radius + 1)
    lo_j, hi_j = max(0, j - radius), min(ridge_mask.shape[1], j + radius + 1)
    idx = np.argwhere(labels[lo_i:hi_i, lo_j:hi_j] == lab) + [lo_i, lo_j]
    if len(idx) < 2:
        return None
    pts = np.column_stack([spec.coords_i[idx[:, 0]], spec.coords_j[idx[:, 1]]])
    pts -= pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts, full_matrices=False)
    if s[0] == 0:
        return None
    t = np.zeros(spec.base_point.shape[0])
    t[spec.axis_i], t[spec.axis_j] = vt[0]
    return t


@dataclass(frozen=True)
class RidgeValidity:
    valid: bool
    reasons: tuple
    unchecked: tuple = ("curvature condition not evaluated",)
    lambda_n: float = float("nan")
    angle_deg: float = float("nan")


def ftle_ridge_validity(vf, cell, grid: ScalarFieldGrid, cfg=IntegratorConfig(),
                        gap_tol=1e-6, angle_tol_deg=10.0):
    """Check the eigenvalue and orientation conditions for an FTLE ridge cell.

    Condition 1: ``lambda_n > 1`` and ``lambda_n - lambda_(n-1) > gap_tol * lambda_n``.
    Condition 2: ``xi_n`` orthogonal to the discrete ridge tangent within
    ``angle_tol_deg``.  The third (curvature) condition is not checked.
    """
    spec = grid.spec
    i, j = cell
    x0 = spec.base_point.copy()
    x0[spec.axis_i] = spec.coords_i[i]
    x0[spec.axis_j] = spec.coords_j[j]
    cg = cauchy_green(vf, x0, spec.window, cfg)
    lam = cg.eigenvalues
    reasons = []
    ln = float(lam[-1])
    if not ln > 1.0:
        reasons.append(f"lambda_n = {ln:.6g} is not > 1")
    if not lam[-1] - lam[-2] > gap_tol * lam[-1]:
        reasons.append("lambda_n is not separated from lambda_(n-1)")
    t = ridge_tangent(spec, grid.ridge_mask, cell)
    angle = float("nan")
    if t is None:
        reasons.append("ridge tangent undetermined")
    else:
        c = abs(float(t @ cg.eigenvectors[:, -1]))
        # deviation of xi_n from the ridge normal
        angle = math.degrees(math.asin(min(1.0, c)))
        if angle > angle_tol_deg:
            reasons.append(f"xi_n deviates {angle:.2f} deg from the ridge normal")
    return RidgeValidity(not reasons, tuple(reasons), lambda_n=ln, angle_deg=angle)


def cell_distance_to_curves(spec: GridSpec, cells, curves, density=0.1, margin=10):
    """Distance, in grid cells, from each ``(i, j)`` cell to a set of curves.

    Curves are state-space polylines; they are projected on the slice,
    rescaled to cell units and densified to ``density`` cells per point.
    Segments with an end further than ``margin`` cells outside the grid are
    dropped.
    """
    di, dj = spec.spacing
    ni, nj = spec.resolution
    pts = []
    for c in curves:
        c = np.asarray(c, dtype=float)
        p = np.column_stack([(c[:, spec.axis_i] - spec.range_i[0]) / di,
                             (c[:, spec.axis_j] - spec.range_j[0]) / dj])
        inside = (np.all(np.isfinite(p), axis=1)
                  & (p[:, 0] > -margin) & (p[:, 0] < ni - 1 + margin)
                  & (p[:, 1] > -margin) & (p[:, 1] < nj - 1 + margin))
        pieces = [p[inside]]
        for a, b, keep in zip(p[:-1], p[1:], inside[:-1] & inside[1:]):
            if not keep:
                continue
            k = int(math.ceil(np.linalg.norm(b - a) / density))
            if k > 1:
                s = np.arange(1, k)[:, None] / k
                pieces.append(a + s * (b - a))
        pts.append(np.vstack(pieces))
    pts = [p for p in pts if len(p)]
    if not pts:
        return np.full(len(cells), np.inf)
    tree = cKDTree(np.vstack(pts))
    d, _ = tree.query(np.asarray(cells, dtype=float))
    return d


# -- CSV ---------------------------------------------------------------------

def version_string():
    from . import __version__
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_field_csv(grid: ScalarFieldGrid, path, extra_meta=None, timestamp=True):
    """Write the grid CSV and a ``<path>.json`` metadata sidecar.

    Floats are written with ``repr`` so reading back is bit-exact.  The only
    time-dependent value is the sidecar's ``created`` key.
    """
    path = Path(path)
    spec = grid.spec
    ci, cj = spec.coords_i, spec.coords_j
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for i in range(spec.resolution[0]):
            for j in range(spec.resolution[1]):
                w.writerow([i, j, repr(float(ci[i])), repr(float(cj[j])),
                            repr(float(grid.values[i, j])), int(grid.failed_mask[i, j]),
                            int(grid.ridge_mask[i, j])])
    meta = {"spec": spec.to_dict(), "window": spec.window, "quantity": grid.quantity,
            "model": grid.model_id, "version": version_string()}
    if extra_meta:
        meta.update(extra_meta)
    if timestamp:
        meta["created"] = datetime.now(timezone.utc).isoformat()
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path, sidecar


def read_field_csv(path):
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    try:
        meta = json.loads(sidecar.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read metadata {sidecar}: {exc}", line=0) from exc
    spec = GridSpec.from_dict(meta["spec"])
    ni, nj = spec.resolution
    vals = np.full((ni, nj), np.nan)
    failed = np.zeros((ni, nj), dtype=bool)
    ridge = np.zeros((ni, nj), dtype=bool)
    seen = 0
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header != CSV_COLUMNS:
            raise ParseError(f"unexpected header {header}", line=1)
        for lineno, row in enumerate(rows, start=2):
            try:
                i, j = int(row[0]), int(row[1])
                vals[i, j] = float(row[4])
                failed[i, j] = row[5] == "1"
                ridge[i, j] = row[6] == "1"
            except (ValueError, IndexError) as exc:
                raise ParseError(f"bad row {row}: {exc}", line=lineno) from exc
            seen += 1
    if seen != ni * nj:
        raise ParseError(f"expected {ni * nj} rows, found {seen}", line=seen + 1)
    return ScalarFieldGrid(spec, meta["quantity"], vals, failed, ridge, meta.get("model", ""))
