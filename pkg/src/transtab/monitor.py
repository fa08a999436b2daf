"""Online stability certificates along one trajectory.

Model-based: the max-stretch repulsion rate rho(t) of the flow from the
post-fault state, its running integral gamma(t) and the margin 1/gamma.
Model-free: a Lyapunov-exponent surrogate from a uniformly sampled time
series with a fixed delay, and its verdict and margin.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import IntegratorConfig, as_state, flow_gradients
from .errors import (DegenerateBaseline, NonFiniteState, NonUniformSampling, OutOfRange,
                     ParseError)
from .hyperbolic import quotient_gradient, rho_max_batch, spectra

EPS_V = 0.05
N_HOLD = 5
THETA_FLOOR = 1e-6
CERT_COLUMNS = ["t", "rho", "lambda", "gamma", "margin_gamma", "theta", "margin_theta",
                "verdict"]


@dataclass(eq=False)
class CertificateSeries:
    """Certificate samples; ``rho`` or ``le`` may be ``None`` when not computed.

    ``blowup_time`` is set when the trajectory left the finite range; the
    series then ends at the last finite sample.
    """
    times: np.ndarray
    rho: np.ndarray | None = None
    le: np.ndarray | None = None
    gamma: np.ndarray | None = None
    margin: np.ndarray | None = None
    verdict: list = field(default_factory=list)
    theta: np.ndarray | None = None
    margin_theta: np.ndarray | None = None
    blowup_time: float | None = None

    @property
    def final_verdict(self):
        return self.verdict[-1] if self.verdict else "undecided"


def _sample_times(horizon, every):
    k = int(math.floor(horizon / every + 1e-9))
    t = every * np.arange(k + 1)
    if horizon - t[-1] > 1e-9 * every:
        t = np.append(t, horizon)
    else:
        t[-1] = horizon
    return t


def hold_verdicts(values, low, high, n_hold=N_HOLD):
    """Per-sample verdicts with a hold: a side must persist ``n_hold`` samples.

    ``stable`` once ``value < low`` for the last ``n_hold`` samples,
    ``unstable`` once ``value > high`` for the last ``n_hold`` samples,
    otherwise ``undecided``.
    """
    out = []
    run_lo = run_hi = 0
    for v in values:
        run_lo = run_lo + 1 if v < low else 0
        run_hi = run_hi + 1 if v > high else 0
        if run_lo >= n_hold:
            out.append("stable")
        elif run_hi >= n_hold:
            out.append("unstable")
        else:
            out.append("undecided")
    return out


def cumulative_trapezoid(times, values):
    out = np.zeros(len(times))
    if len(times) > 1:
        out[1:] = np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(times))
    return out


def _rho_single_pass(vf, x_P, times, cfg, quotient, backend):
    batch = flow_gradients(vf, x_P[None, :], times[1:], cfg, backend=backend)
    ok = ~batch.failed[0]
    nok = int(np.argmin(ok)) if not np.all(ok) else len(ok)
    F = batch.grad[0, :nok]
    if quotient and vf.symmetry is not None:
        F = np.stack([quotient_gradient(f, vf.symmetry)[0] for f in F]) if nok else F
    rho = np.ones(nok + 1)
    if nok:
        lam, _, _ = spectra(F)
        rho[1:] = rho_max_batch(lam)
    return rho, nok < len(ok)


def _rho_chained(vf, x_P, times, cfg, quotient, backend):
    # chain rule: grad Phi(x, t_k) = grad Phi(x(t_(k-1)), dt) grad Phi(x, t_(k-1))
    n = vf.dim
    F = np.eye(n)
    x = x_P.copy()
    rho = [1.0]
    for a, b in zip(times[:-1], times[1:]):
        step = flow_gradients(vf, x[None, :], [b - a], cfg, backend=backend)
        if step.failed[0, 0]:
            return np.array(rho), True
        F = step.grad[0, 0] @ F
        x = step.phi[0, 0]
        G = quotient_gradient(F, vf.symmetry)[0] if quotient and vf.symmetry is not None else F
        lam, _, _ = spectra(G[None])
        r = float(rho_max_batch(lam)[0])
        if not math.isfinite(r):
            return np.array(rho), True
        rho.append(r)
    return np.array(rho), False


def certificate_rho(vf, x_P, horizon, sample_every=None, cfg=IntegratorConfig(),
                    eps_v=EPS_V, n_hold=N_HOLD, quotient=True, chained=False, backend=None):
    """Max-stretch repulsion rate over ``[0, t]`` from ``x_P`` at each sample.

    ``rho(t) = sqrt(lambda_n(C_t(x_P)))`` with ``rho(0) = 1``.  When the field
    has a symmetry and ``quotient`` is set, the neutral symmetry direction is
    factored out first (otherwise ``rho >= 1`` always).  ``gamma`` is the
    trapezoidal integral of ``rho``; ``margin = 1/gamma``.  ``chained``
    composes per-interval gradients instead of recording one long pass.
    """
    x_P = as_state(x_P, vf.dim)
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    every = cfg.h if sample_every is None else float(sample_every)
    if not every > 0:
        raise ValueError("sample_every must be positive")
    times = _sample_times(horizon, every)
    run = _rho_chained if chained else _rho_single_pass
    rho, blew = run(vf, x_P, times, cfg, quotient, backend)
    times = times[:len(rho)]
    gamma = cumulative_trapezoid(times, rho)
    with np.errstate(divide="ignore"):
        margin = np.where(gamma > 0, 1.0 / gamma, np.inf)
    verdict = hold_verdicts(rho, 1.0 - eps_v, 1.0 + eps_v, n_hold)
    blowup = None
    if blew:
        blowup = float(times[-1])
        verdict[-1] = "unstable"
    return CertificateSeries(times, rho=rho, gamma=gamma, margin=margin, verdict=verdict,
                             blowup_time=blowup)


def v_rho(vf, x0, T_max, cfg=IntegratorConfig(), sample_every=None, tail=0.1, rtol=1e-6):
    """``gamma(x0, T_max)`` and whether its last ``tail`` fraction added
    less than ``rtol`` of the total.  The value is a truncation, not a limit."""
    if not math.isfinite(T_max):
        raise ValueError("T_max must be finite")
    s = certificate_rho(vf, x0, T_max, sample_every, cfg)
    if s.blowup_time is not None:
        raise NonFiniteState(f"trajectory left the finite range after t={s.blowup_time:g}",
                             time=s.blowup_time)
    value = float(s.gamma[-1])
    cut = np.searchsorted(s.times, (1.0 - tail) * T_max - 1e-12)
    increment = value - float(s.gamma[cut])
    return value, bool(increment < rtol * value)


# -- model-free Lyapunov exponent ----------------------------------------------

@dataclass(frozen=True, eq=False)
class TimeSeriesWindow:
    """Uniformly sampled states ``states[k]`` at ``times[k]``."""
    times: np.ndarray
    states: np.ndarray
    delay: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.states, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if t.ndim != 1 or x.shape[0] != t.shape[0]:
            raise ValueError("times and states must have the same number of samples")
        if t.shape[0] < 2:
            raise ValueError("a time series needs at least two samples")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
            raise NonFiniteState("time series contains NaN or Inf")
        h = (t[-1] - t[0]) / (len(t) - 1)
        if not h > 0 or np.max(np.abs(np.diff(t) - h)) > 1e-9 * h:
            raise NonUniformSampling("sample times are not uniformly spaced within 1e-9 relative")
        d = self.delay / h
        if abs(d - round(d)) > 1e-9 * max(1.0, d) or round(d) < 1:
            raise ValueError(f"delay {self.delay} must be a positive multiple of the "
                             f"sampling period {h}")
        if len(t) < round(d) + 2:
            raise ValueError("window is too short for the delay")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    @property
    def period(self):
        return (self.times[-1] - self.times[0]) / (len(self.times) - 1)

    @property
    def lag(self):
        return int(round(self.delay / self.period))

    def index(self, t):
        k = t / self.period
        r = round(k)
        if abs(k - r) > 1e-9 * max(1.0, abs(k)):
            raise ValueError(f"t={t} does not fall on a sample time")
        return int(r)


def model_free_le(w: TimeSeriesWindow, t):
    """``(1/t) log(|x(t+dt) - x(t)| / |x(dt) - x(0)|)`` with ``t`` measured
    from the window start; no interpolation is performed."""
    if not t > w.delay:
        raise ValueError(f"t={t} must exceed the delay {w.delay}")
    k = w.index(t)
    d = w.lag
    if k + d >= len(w.times):
        raise OutOfRange(f"t + delay = {t + w.delay:g} lies beyond the window")
    den = float(np.linalg.norm(w.states[d] - w.states[0]))
    if den <= 1e-12:
        raise DegenerateBaseline("initial delayed difference vanishes; "
                                 "the series starts at an equilibrium")
    num = float(np.linalg.norm(w.states[k + d] - w.states[k]))
    with np.errstate(divide="ignore"):
        return math.log(num / den) / t if num > 0 else -math.inf


def model_free_le_series(w: TimeSeriesWindow):
    """All ``(t, lambda(t))`` with ``t`` on a sample after the delay."""
    d = w.lag
    den = float(np.linalg.norm(w.states[d] - w.states[0]))
    if den <= 1e-12:
        raise DegenerateBaseline("initial delayed difference vanishes; "
                                 "the series starts at an equilibrium")
    k = np.arange(d + 1, len(w.times) - d)
    t = k * w.period
    num = np.linalg.norm(w.states[k + d] - w.states[k], axis=1)
    with np.errstate(divide="ignore"):
        lam = np.log(num / den) / t
    return t, lam


@dataclass(frozen=True)
class LEVerdict:
    verdict: str
    margin_theta: float
    theta: float


def theta_series(times, lam, floor=THETA_FLOOR):
    """``integral of max(lambda, 0)`` (trapezoid) plus ``floor``."""
    return cumulative_trapezoid(np.asarray(times, float), np.maximum(np.asarray(lam, float), 0.0)) + floor


def le_verdict(times, lam, n_hold=N_HOLD, floor=THETA_FLOOR):
    """Sign of the last ``n_hold`` samples and the margin ``1/theta``."""
    lam = np.asarray(lam, dtype=float)
    if len(lam) < n_hold:
        raise ValueError(f"need at least {n_hold} samples")
    tail = lam[-n_hold:]
    verdict = "stable" if np.all(tail < 0) else "unstable" if np.all(tail > 0) else "undecided"
    theta = float(theta_series(times, lam, floor)[-1])
    return LEVerdict(verdict, 1.0 / theta, theta)


# -- CSV i/o -------------------------------------------------------------------

def write_series_csv(path, times, states, names=None):
    """Time series CSV ``t, x1..xn`` with round-trip exact floats."""
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    names = names or [f"x{i + 1}" for i in range(states.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *names])
        for t, row in zip(times, states):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])
    return Path(path)


def ingest_series(path, delay, schema=None):
    """Read a ``t, x1..xn`` CSV into a :class:`TimeSeriesWindow`.

    ``schema`` may give ``{"columns": [...]}`` to pin the state column names.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}", line=0) from exc
    with fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if not header:
            raise ParseError(f"{path} is empty", line=1)
        header = [h.strip() for h in header]
        if header[0] != "t" or len(header) < 2:
            raise ParseError(f"header must start with 't' and name state columns, got {header}",
                             line=1)
        if schema and "columns" in schema and header[1:] != list(schema["columns"]):
            raise ParseError(f"columns {header[1:]} do not match schema {schema['columns']}",
                             line=1)
        data = []
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite value", line=lineno)
            data.append(vals)
    if len(data) < 2:
        raise ParseError(f"{path} holds fewer than two samples", line=len(data) + 2)
    arr = np.array(data)
    return TimeSeriesWindow(arr[:, 0] - arr[0, 0], arr[:, 1:], delay)


def merge_certificates(cert: CertificateSeries | None, le_times=None, le=None,
                       n_hold=N_HOLD, floor=THETA_FLOOR):
    """Rows for the certificate CSV on the union of sample times.

    ``verdict`` is the model-based verdict where ``rho`` exists and the
    model-free one elsewhere.
    """
    rows = {}
    if cert is not None:
        for k, t in enumerate(cert.times):
            rows[round(float(t), 12)] = {"t": float(t), "rho": cert.rho[k],
                                         "gamma": cert.gamma[k],
                                         "margin_gamma": cert.margin[k],
                                         "verdict": cert.verdict[k]}
    if le is not None:
        theta = theta_series(le_times, le, floor)
        lv = hold_verdicts(le, 0.0, 0.0, n_hold)
        for k, t in enumerate(le_times):
            r = rows.setdefault(round(float(t), 12), {"t": float(t), "verdict": lv[k]})
            r.update({"lambda": le[k], "theta": theta[k], "margin_theta": 1.0 / theta[k]})
    return [rows[k] for k in sorted(rows)]


def write_certificate_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CERT_COLUMNS)
        for r in rows:
            w.writerow([r["verdict"] if c == "verdict" else repr(float(r.get(c, math.nan)))
                        for c in CERT_COLUMNS])
    return Path(path)
