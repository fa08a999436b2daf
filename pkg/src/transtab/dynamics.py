"""Vector fields, fixed-step RK4 integration and flow-map gradients."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import kernels
from .errors import DimensionMismatch, JacobianUnavailable, NonFiniteState

BLOWUP = 1e12
PYTHON = -1


@dataclass(frozen=True, eq=False)
class VectorField:
    """An autonomous vector field ``x' = f(x)`` on R^dim.

    Built-in models are kernel-backed (``kind`` >= 0 with a packed parameter
    vector) and run on the compiled/vectorized backends.  Arbitrary Python
    callables are accepted through :meth:`from_callable` and integrated by a
    plain Python RK4 loop.

    ``symmetry`` optionally holds orthonormal columns spanning directions along
    which the field is translation invariant (e.g. a common shift of all
    rotor angles).  ``spec`` is the JSON-serializable model block that
    rebuilds the field.
    """
    dim: int
    name: str
    kind: int = PYTHON
    params: np.ndarray | None = None
    func: Callable | None = None
    jac: Callable | None = None
    sign: float = 1.0
    symmetry: np.ndarray | None = None
    spec: dict = field(default_factory=dict)

    @classmethod
    def from_callable(cls, dim, func, jac=None, name="custom", symmetry=None):
        return cls(dim=dim, name=name, func=func, jac=jac, symmetry=symmetry)

    @property
    def has_jacobian(self):
        return self.kind != PYTHON or self.jac is not None

    def negated(self):
        """The time-reversed field ``-f``."""
        return replace(self, sign=-self.sign)

    def eval(self, x):
        x = as_state(x, self.dim)
        if self.kind == PYTHON:
            return self.sign * np.asarray(self.func(x), dtype=float)
        return self.sign * kernels.rhs(self.kind, self.params, x)[0]

    def jacobian(self, x):
        x = as_state(x, self.dim)
        if self.kind == PYTHON:
            if self.jac is None:
                raise JacobianUnavailable(f"field {self.name!r} has no analytic Jacobian")
            return self.sign * np.asarray(self.jac(x), dtype=float)
        return self.sign * kernels.jac(self.kind, self.params, x)[0]


@dataclass(frozen=True)
class IntegratorConfig:
    h: float = 1e-3
    jacobian_mode: str = "variational"
    fd_epsilon: float = 1e-6

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"step h must be positive, got {self.h}")
        if self.jacobian_mode not in ("variational", "finite-difference"):
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")
        if not 0 < self.fd_epsilon <= 1e-2:
            raise ValueError(f"fd_epsilon must lie in (0, 1e-2], got {self.fd_epsilon}")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    h: float

    def __len__(self):
        return len(self.times)

    @property
    def final(self):
        return self.states[-1]


@dataclass(frozen=True)
class FlowSample:
    """Flow map value and gradient at ``(x0, t)``.

    ``logdet`` is ``log|det grad_phi|`` integrated along the trajectory from
    the trace of the Jacobian; it stays accurate when ``grad_phi`` is too
    ill-conditioned for a direct determinant.
    """
    x0: np.ndarray
    t: float
    phi: np.ndarray
    grad_phi: np.ndarray
    logdet: float


def as_state(x, dim=None):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch(f"state must be a 1-D vector, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise DimensionMismatch(f"state has dimension {x.shape[0]}, field expects {dim}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteState("state contains NaN or Inf")
    return x


def step_plan(windows, h):
    """Step sizes and record indices reaching each ``|window|`` exactly.

    ``windows`` must be sorted by magnitude.  Full steps of ``h`` are taken and
    the last step before each window is shortened to land on it.  Returns
    ``(hs, rec, times)`` where ``times`` are the magnitudes reached after each
    step (``times[0] = 0``).
    """
    hs = []
    times = [0.0]
    rec = []
    base = 0.0
    for w in windows:
        target = abs(float(w))
        if target < base:
            raise ValueError("windows must be sorted by magnitude")
        span = target - base
        nfull = int(np.floor(span / h + 1e-9))
        rem = span - nfull * h
        if rem <= 1e-9 * h:
            rem = 0.0
        for i in range(1, nfull + 1):
            hs.append(h)
            times.append(base + i * h)
        if rem > 0.0:
            hs.append(rem)
            times.append(target)
        elif nfull > 0:
            times[-1] = target
        rec.append(len(hs))
        base = target
    return np.array(hs, dtype=float), np.array(rec, dtype=np.int64), np.array(times)


def _python_flow(vf, X0, sign, hs, rec, tangent):
    """Reference RK4 loop for fields given as Python callables."""
    nb, n = X0.shape
    nr = len(rec)
    xs = np.full((nb, nr, n), np.nan)
    Ms = np.full((nb, nr, n, n), np.nan) if tangent else None
    lds = np.full((nb, nr), np.nan) if tangent else None
    nrec = np.zeros(nb, dtype=np.int64)
    f = vf.func
    jf = vf.jac
    s0 = vf.sign * sign

    def stage(x, M):
        kx = s0 * np.asarray(f(x), dtype=float)
        if not tangent:
            return kx, None, 0.0
        J = s0 * np.asarray(jf(x), dtype=float)
        return kx, J @ M, float(np.trace(J))

    for b in range(nb):
        x = X0[b].copy()
        M = np.eye(n)
        ld = 0.0
        r = 0
        while r < nr and rec[r] == 0:
            xs[b, r] = x
            if tangent:
                Ms[b, r], lds[b, r] = M, ld
            r += 1
        with np.errstate(all="ignore"):
            for s, h in enumerate(hs):
                k1, K1, t1 = stage(x, M)
                k2, K2, t2 = stage(x + 0.5 * h * k1, M + 0.5 * h * K1 if tangent else M)
                k3, K3, t3 = stage(x + 0.5 * h * k2, M + 0.5 * h * K2 if tangent else M)
                k4, K4, t4 = stage(x + h * k3, M + h * K3 if tangent else M)
                x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
                if tangent:
                    M = M + h / 6.0 * (K1 + 2 * K2 + 2 * K3 + K4)
                    ld += h / 6.0 * (t1 + 2 * t2 + 2 * t3 + t4)
                bad = not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP
                if tangent and not np.all(np.isfinite(M)):
                    bad = True
                if bad:
                    break
                while r < nr and rec[r] == s + 1:
                    xs[b, r] = x
                    if tangent:
                        Ms[b, r], lds[b, r] = M, ld
                    r += 1
        nrec[b] = r
    return kernels.FlowBatch(xs, Ms, lds, nrec)


def run_flow(vf, X0, hs, rec, sign=1.0, tangent=False, backend=None):
    """Dispatch a batch flow to the kernels or the Python reference loop."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if X0.shape[1] != vf.dim:
        raise DimensionMismatch(f"initial states have dimension {X0.shape[1]}, field expects {vf.dim}")
    if tangent and not vf.has_jacobian:
        raise JacobianUnavailable(f"field {vf.name!r} has no analytic Jacobian")
    if vf.kind == PYTHON:
        return _python_flow(vf, X0, sign, hs, rec, tangent)
    return kernels.flow(vf.kind, vf.params, vf.sign * sign, X0, hs, rec,
                        tangent=tangent, backend=backend)


def integrate(vf, x0, t_end, cfg=IntegratorConfig()):
    """Integrate ``x0`` from 0 to ``t_end`` (backward when negative).

    Returns every RK4 step as a :class:`Trajectory`; the last step is
    shortened so the final time equals ``t_end``.
    """
    x0 = as_state(x0, vf.dim)
    if not np.isfinite(t_end):
        raise ValueError("t_end must be finite")
    if t_end == 0:
        return Trajectory(np.array([0.0]), x0[None, :].copy(), cfg.h)
    sign = 1.0 if t_end > 0 else -1.0
    hs, _, times = step_plan([t_end], cfg.h)
    rec = np.arange(len(hs) + 1)
    fb = run_flow(vf, x0, hs, rec, sign=sign)
    reached = int(fb.nrec[0])
    if reached < len(rec):
        t_fail = sign * times[reached - 1] if reached else 0.0
        raise NonFiniteState(
            f"state left the finite range after t={t_fail:g} (|x| > {BLOWUP:g} or NaN)",
            time=t_fail)
    return Trajectory(sign * times, fb.x[0], cfg.h)


def _fd_gradient(vf, x0, t, cfg):
    n = vf.dim
    steps = cfg.fd_epsilon * np.maximum(1.0, np.abs(x0))
    X = np.repeat(x0[None, :], 2 * n, axis=0)
    X[np.arange(n), np.arange(n)] += steps
    X[n + np.arange(n), np.arange(n)] -= steps
    sign = 1.0 if t > 0 else -1.0
    hs, rec, _ = step_plan([t], cfg.h)
    fb = run_flow(vf, np.vstack([x0, X]), hs, rec, sign=sign)
    if np.any(fb.nrec < 1):
        raise NonFiniteState(f"perturbed flow left the finite range before t={t:g}")
    phi = fb.x[0, 0]
    plus = fb.x[1:n + 1, 0]
    minus = fb.x[n + 1:, 0]
    grad = ((plus - minus) / (2.0 * steps[:, None])).T
    sgn, ld = np.linalg.slogdet(grad)
    return phi, grad, float(ld)


def flow_with_gradient(vf, x0, t, cfg=IntegratorConfig()):
    """Flow map ``phi(x0, t)`` and its gradient.

    ``cfg.jacobian_mode`` selects the variational equations
    (``M' = Jf(x) M``, ``M(0) = I``) or central finite differences of the
    flow map with per-coordinate step ``fd_epsilon * max(1, |x0_i|)``.
    """
    x0 = as_state(x0, vf.dim)
    if t == 0:
        return FlowSample(x0.copy(), 0.0, x0.copy(), np.eye(vf.dim), 0.0)
    if cfg.jacobian_mode == "finite-difference":
        phi, grad, ld = _fd_gradient(vf, x0, t, cfg)
        return FlowSample(x0.copy(), float(t), phi, grad, ld)
    batch = flow_gradients(vf, x0[None, :], [t], cfg)
    if batch.failed[0, 0]:
        raise NonFiniteState(f"flow from x0 left the finite range before t={t:g}")
    return FlowSample(x0.copy(), float(t), batch.phi[0, 0], batch.grad[0, 0],
                      float(batch.logdet[0, 0]))


@dataclass
class GradientBatch:
    """Flow gradients of many initial states at several windows.

    Arrays are indexed ``[point, window, ...]``; ``failed[b, w]`` marks
    windows that point ``b`` did not reach with a finite state.
    """
    windows: np.ndarray
    phi: np.ndarray
    grad: np.ndarray
    logdet: np.ndarray
    failed: np.ndarray


def flow_gradients(vf, X0, windows, cfg=IntegratorConfig(), backend=None):
    """Variational flow gradients for a batch of points in one pass.

    All ``windows`` must share a sign; a single integration records the
    gradient at each of them.
    """
    windows = np.atleast_1d(np.asarray(windows, dtype=float))
    if np.any(windows == 0):
        raise ValueError("windows must be non-zero")
    signs = np.sign(windows)
    if not np.all(signs == signs[0]):
        raise ValueError("windows must all be forward or all backward")
    order = np.argsort(np.abs(windows), kind="stable")
    hs, rec, _ = step_plan(np.abs(windows[order]), cfg.h)
    fb = run_flow(vf, X0, hs, rec, sign=signs[0], tangent=True, backend=backend)
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    failed = np.arange(len(windows))[None, :] >= fb.nrec[:, None]
    return GradientBatch(windows, fb.x[:, inv], fb.M[:, inv], fb.logdet[:, inv], failed[:, inv])
