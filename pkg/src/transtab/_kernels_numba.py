"""Compiled RK4 kernels (numba).

Vector fields are encoded as ``(kind, p)`` where ``p`` is a flat float64
parameter vector; see ``transtab.models`` for the packing of each kind.
Every routine here has a vectorized twin in ``_kernels_numpy``.
"""
import math

import numpy as np
from numba import njit, prange

AFFINE = 0
SWING = 1
NETWORK = 2

BLOWUP = 1e12


@njit(cache=True)
def rhs_point(kind, p, x, out):
    n = x.shape[0]
    if kind == AFFINE:
        ob = 1 + n * n
        for i in range(n):
            acc = p[ob + i]
            base = 1 + i * n
            for j in range(n):
                acc += p[base + j] * x[j]
            out[i] = acc
    elif kind == SWING:
        m = n // 2
        mp = m + 1
        oP = 1
        oD = 1 + m
        oE = 1 + 2 * m
        oY = 2 + 3 * m
        for i in range(m):
            out[i] = x[m + i]
            acc = p[oP + i] - p[oD + i] * x[m + i]
            ei = p[oE + i]
            for j in range(mp):
                if j == i:
                    continue
                dj = x[j] if j < m else 0.0
                acc -= ei * p[oE + j] * p[oY + i * mp + j] * math.sin(x[i] - dj)
            out[m + i] = acc
    else:
        m = n // 2
        oc = 1
        oD = 1 + m
        oP = 1 + 2 * m
        oE = 1 + 3 * m
        oG = 1 + 4 * m
        oB = oG + m * m
        for i in range(m):
            out[i] = x[m + i]
            ei = p[oE + i]
            acc = -p[oD + i] * x[m + i] + p[oP + i] - p[oG + i * m + i] * ei * ei
            for j in range(m):
                if j == i:
                    continue
                d = x[i] - x[j]
                acc -= ei * p[oE + j] * (p[oG + i * m + j] * math.cos(d)
                                         + p[oB + i * m + j] * math.sin(d))
            out[m + i] = p[oc + i] * acc


@njit(cache=True)
def jac_point(kind, p, x, J):
    n = x.shape[0]
    if kind == AFFINE:
        for i in range(n):
            for j in range(n):
                J[i, j] = p[1 + i * n + j]
        return
    m = n // 2
    J[:, :] = 0.0
    for i in range(m):
        J[i, m + i] = 1.0
    if kind == SWING:
        mp = m + 1
        oD = 1 + m
        oE = 1 + 2 * m
        oY = 2 + 3 * m
        for i in range(m):
            ei = p[oE + i]
            diag = 0.0
            for j in range(mp):
                if j == i:
                    continue
                dj = x[j] if j < m else 0.0
                k = ei * p[oE + j] * p[oY + i * mp + j] * math.cos(x[i] - dj)
                diag -= k
                if j < m:
                    J[m + i, j] = k
            J[m + i, i] = diag
            J[m + i, m + i] = -p[oD + i]
    else:
        oc = 1
        oD = 1 + m
        oE = 1 + 3 * m
        oG = 1 + 4 * m
        oB = oG + m * m
        for i in range(m):
            ei = p[oE + i]
            ci = p[oc + i]
            diag = 0.0
            for j in range(m):
                if j == i:
                    continue
                d = x[i] - x[j]
                s = math.sin(d)
                c = math.cos(d)
                g = p[oG + i * m + j]
                b = p[oB + i * m + j]
                w = ei * p[oE + j]
                # d/d(delta_i) of the coupling sum
                dk = w * (-g * s + b * c)
                diag -= dk
                J[m + i, j] = ci * dk
            J[m + i, i] = ci * diag
            J[m + i, m + i] = -ci * p[oD + i]


@njit(cache=True)
def rhs_jac_point(kind, p, x, out, J):
    """``f(x)`` and ``Jf(x)`` together, sharing the trigonometric terms."""
    n = x.shape[0]
    if kind == AFFINE:
        ob = 1 + n * n
        for i in range(n):
            acc = p[ob + i]
            base = 1 + i * n
            for j in range(n):
                a = p[base + j]
                J[i, j] = a
                acc += a * x[j]
            out[i] = acc
        return
    m = n // 2
    for i in range(n):
        for j in range(n):
            J[i, j] = 0.0
    for i in range(m):
        J[i, m + i] = 1.0
        out[i] = x[m + i]
    if kind == SWING:
        mp = m + 1
        oP = 1
        oD = 1 + m
        oE = 1 + 2 * m
        oY = 2 + 3 * m
        for i in range(m):
            ei = p[oE + i]
            acc = p[oP + i] - p[oD + i] * x[m + i]
            diag = 0.0
            for j in range(mp):
                if j == i:
                    continue
                dj = x[j] if j < m else 0.0
                d = x[i] - dj
                w = ei * p[oE + j] * p[oY + i * mp + j]
                acc -= w * math.sin(d)
                k = w * math.cos(d)
                diag -= k
                if j < m:
                    J[m + i, j] = k
            out[m + i] = acc
            J[m + i, i] = diag
            J[m + i, m + i] = -p[oD + i]
    else:
        oc = 1
        oD = 1 + m
        oP = 1 + 2 * m
        oE = 1 + 3 * m
        oG = 1 + 4 * m
        oB = oG + m * m
        for i in range(m):
            ei = p[oE + i]
            ci = p[oc + i]
            acc = -p[oD + i] * x[m + i] + p[oP + i] - p[oG + i * m + i] * ei * ei
            diag = 0.0
            for j in range(m):
                if j == i:
                    continue
                d = x[i] - x[j]
                s = math.sin(d)
                c = math.cos(d)
                g = p[oG + i * m + j]
                b = p[oB + i * m + j]
                w = ei * p[oE + j]
                acc -= w * (g * c + b * s)
                dk = w * (-g * s + b * c)
                diag -= dk
                J[m + i, j] = ci * dk
            out[m + i] = ci * acc
            J[m + i, i] = ci * diag
            J[m + i, m + i] = -ci * p[oD + i]


@njit(cache=True)
def _state_bad(x):
    for i in range(x.shape[0]):
        v = x[i]
        if not math.isfinite(v) or abs(v) > BLOWUP:
            return True
    return False


@njit(cache=True)
def _matrix_bad(M):
    n = M.shape[0]
    for i in range(n):
        for j in range(n):
            if not math.isfinite(M[i, j]):
                return True
    return False


@njit(cache=True)
def _flow_point(kind, p, sign, x0, hs, rec, xs):
    n = x0.shape[0]
    x = x0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xt = np.empty(n)
    r = 0
    nrec = rec.shape[0]
    while r < nrec and rec[r] == 0:
        xs[r, :] = x
        r += 1
    for s in range(hs.shape[0]):
        h = sign * hs[s]
        rhs_point(kind, p, x, k1)
        for i in range(n):
            xt[i] = x[i] + 0.5 * h * k1[i]
        rhs_point(kind, p, xt, k2)
        for i in range(n):
            xt[i] = x[i] + 0.5 * h * k2[i]
        rhs_point(kind, p, xt, k3)
        for i in range(n):
            xt[i] = x[i] + h * k3[i]
        rhs_point(kind, p, xt, k4)
        for i in range(n):
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if _state_bad(x):
            return r
        while r < nrec and rec[r] == s + 1:
            xs[r, :] = x
            r += 1
    return r


@njit(cache=True, error_model="numpy")
def _flow_point_tangent(kind, p, sign, x0, hs, rec, xs, Ms, lds):
    # Classical RK4 on (x, M, log det M) written as a loop over the four
    # stages; nested helper calls defeat numba's inlining here.
    n = x0.shape[0]
    x = x0.copy()
    M = np.eye(n)
    ld = 0.0
    J = np.empty((n, n))
    kx = np.zeros(n)
    KM = np.zeros((n, n))
    xt = np.empty(n)
    Mt = np.empty((n, n))
    ax = np.empty(n)
    aM = np.empty((n, n))
    r = 0
    nrec = rec.shape[0]
    while r < nrec and rec[r] == 0:
        xs[r, :] = x
        Ms[r, :, :] = M
        lds[r] = ld
        r += 1
    for s in range(hs.shape[0]):
        h = hs[s]
        at = 0.0
        for st in range(4):
            if st == 0:
                c = 0.0
                w = 1.0
            elif st == 3:
                c = h
                w = 1.0
            else:
                c = 0.5 * h
                w = 2.0
            for i in range(n):
                xt[i] = x[i] + c * kx[i]
                for j in range(n):
                    Mt[i, j] = M[i, j] + c * KM[i, j]
            rhs_jac_point(kind, p, xt, kx, J)
            tr = 0.0
            for i in range(n):
                kx[i] *= sign
                tr += J[i, i]
                for j in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc += J[i, k] * Mt[k, j]
                    KM[i, j] = sign * acc
            at += w * sign * tr
            for i in range(n):
                if st == 0:
                    ax[i] = kx[i]
                else:
                    ax[i] += w * kx[i]
                for j in range(n):
                    if st == 0:
                        aM[i, j] = KM[i, j]
                    else:
                        aM[i, j] += w * KM[i, j]
        for i in range(n):
            x[i] += h / 6.0 * ax[i]
            for j in range(n):
                M[i, j] += h / 6.0 * aM[i, j]
        ld += h / 6.0 * at
        if _state_bad(x) or _matrix_bad(M):
            return r
        while r < nrec and rec[r] == s + 1:
            xs[r, :] = x
            Ms[r, :, :] = M
            lds[r] = ld
            r += 1
    return r


@njit(cache=True, parallel=True)
def flow_batch(kind, p, sign, X0, hs, rec, xs, nrec):
    for b in prange(X0.shape[0]):
        nrec[b] = _flow_point(kind, p, sign, X0[b], hs, rec, xs[b])


@njit(cache=True, parallel=True)
def flow_tangent_batch(kind, p, sign, X0, hs, rec, xs, Ms, lds, nrec):
    for b in prange(X0.shape[0]):
        nrec[b] = _flow_point_tangent(kind, p, sign, X0[b], hs, rec, xs[b], Ms[b], lds[b])


@njit(cache=True)
def rhs_batch(kind, p, X, out):
    for b in range(X.shape[0]):
        rhs_point(kind, p, X[b], out[b])


@njit(cache=True)
def jac_batch(kind, p, X, out):
    for b in range(X.shape[0]):
        jac_point(kind, p, X[b], out[b])
