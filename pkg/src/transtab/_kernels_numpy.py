"""Vectorized numpy twins of the compiled kernels.

Used when numba is unavailable or disabled with ``TRANSTAB_NUMBA=0``.
Work is vectorized across the batch of initial conditions; the time loop
stays in Python.
"""
import numpy as np

AFFINE = 0
SWING = 1
NETWORK = 2

BLOWUP = 1e12


def _unpack_swing(p, n):
    m = n // 2
    mp = m + 1
    P = p[1:1 + m]
    D = p[1 + m:1 + 2 * m]
    E = p[1 + 2 * m:2 + 3 * m]
    Y = p[2 + 3 * m:2 + 3 * m + mp * mp].reshape(mp, mp)
    K = (E[:, None] * E[None, :] * Y)[:m].copy()
    K[np.arange(m), np.arange(m)] = 0.0
    return m, P, D, K


def _unpack_network(p, n):
    m = n // 2
    c = p[1:1 + m]
    D = p[1 + m:1 + 2 * m]
    Pm = p[1 + 2 * m:1 + 3 * m]
    E = p[1 + 3 * m:1 + 4 * m]
    G = p[1 + 4 * m:1 + 4 * m + m * m].reshape(m, m)
    B = p[1 + 4 * m + m * m:1 + 4 * m + 2 * m * m].reshape(m, m)
    W = E[:, None] * E[None, :]
    off = ~np.eye(m, dtype=bool)
    return m, c, D, Pm, np.diag(G) * E * E, W * G * off, W * B * off


def rhs(kind, p, X):
    X = np.atleast_2d(X)
    n = X.shape[1]
    if kind == AFFINE:
        A = p[1:1 + n * n].reshape(n, n)
        b = p[1 + n * n:1 + n * n + n]
        return X @ A.T + b
    out = np.empty_like(X)
    if kind == SWING:
        m, P, D, K = _unpack_swing(p, n)
        delta = X[:, :m]
        omega = X[:, m:]
        full = np.concatenate([delta, np.zeros((X.shape[0], 1))], axis=1)
        diff = delta[:, :, None] - full[:, None, :]
        out[:, :m] = omega
        out[:, m:] = P - D * omega - np.sum(K * np.sin(diff), axis=2)
        return out
    m, c, D, Pm, self_term, WG, WB = _unpack_network(p, n)
    delta = X[:, :m]
    omega = X[:, m:]
    diff = delta[:, :, None] - delta[:, None, :]
    coupling = np.sum(WG * np.cos(diff) + WB * np.sin(diff), axis=2)
    out[:, :m] = omega
    out[:, m:] = c * (-D * omega + Pm - self_term - coupling)
    return out


def jac(kind, p, X):
    X = np.atleast_2d(X)
    nb, n = X.shape
    if kind == AFFINE:
        A = p[1:1 + n * n].reshape(n, n)
        return np.broadcast_to(A, (nb, n, n)).copy()
    J = np.zeros((nb, n, n))
    m = n // 2
    idx = np.arange(m)
    J[:, idx, m + idx] = 1.0
    if kind == SWING:
        _, P, D, K = _unpack_swing(p, n)
        delta = X[:, :m]
        full = np.concatenate([delta, np.zeros((nb, 1))], axis=1)
        k = K * np.cos(delta[:, :, None] - full[:, None, :])
        J[:, m:, :m] = k[:, :, :m]
        J[:, m + idx, idx] = -np.sum(k, axis=2)
        J[:, m + idx, m + idx] = -D
        return J
    _, c, D, _, _, WG, WB = _unpack_network(p, n)
    delta = X[:, :m]
    diff = delta[:, :, None] - delta[:, None, :]
    dk = -WG * np.sin(diff) + WB * np.cos(diff)
    J[:, m:, :m] = c[:, None] * dk
    J[:, m + idx, idx] = -c * np.sum(dk, axis=2)
    J[:, m + idx, m + idx] = -c * D
    return J


def _bad_rows(X):
    return ~np.all(np.isfinite(X) & (np.abs(X) <= BLOWUP), axis=1)


def flow_batch(kind, p, sign, X0, hs, rec, xs, nrec):
    x = np.array(X0, dtype=float)
    nb = x.shape[0]
    alive = np.ones(nb, dtype=bool)
    r_of = {}
    for r, step in enumerate(rec):
        r_of.setdefault(int(step), []).append(r)
    nrec[:] = 0
    for r in r_of.get(0, ()):
        xs[:, r] = x
        nrec[:] = r + 1
    with np.errstate(all="ignore"):
        for s, hh in enumerate(hs):
            h = sign * hh
            k1 = rhs(kind, p, x)
            k2 = rhs(kind, p, x + 0.5 * h * k1)
            k3 = rhs(kind, p, x + 0.5 * h * k2)
            k4 = rhs(kind, p, x + h * k3)
            new = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = _bad_rows(new) & alive
            alive &= ~bad
            # frozen rows keep their last finite state so nothing overflows further
            x = np.where(alive[:, None], new, x)
            for r in r_of.get(s + 1, ()):
                xs[alive, r] = x[alive]
                nrec[alive] = r + 1
            if not alive.any():
                break


def _tangent_stage(kind, p, sign, x, M):
    kx = sign * rhs(kind, p, x)
    J = jac(kind, p, x)
    KM = sign * np.matmul(J, M)
    tr = sign * np.trace(J, axis1=1, axis2=2)
    return kx, KM, tr


def flow_tangent_batch(kind, p, sign, X0, hs, rec, xs, Ms, lds, nrec):
    x = np.array(X0, dtype=float)
    nb, n = x.shape
    M = np.broadcast_to(np.eye(n), (nb, n, n)).copy()
    ld = np.zeros(nb)
    alive = np.ones(nb, dtype=bool)
    r_of = {}
    for r, step in enumerate(rec):
        r_of.setdefault(int(step), []).append(r)
    nrec[:] = 0
    for r in r_of.get(0, ()):
        xs[:, r] = x
        Ms[:, r] = M
        lds[:, r] = ld
        nrec[:] = r + 1
    with np.errstate(all="ignore"):
        for s, h in enumerate(hs):
            k1, K1, t1 = _tangent_stage(kind, p, sign, x, M)
            k2, K2, t2 = _tangent_stage(kind, p, sign, x + 0.5 * h * k1, M + 0.5 * h * K1)
            k3, K3, t3 = _tangent_stage(kind, p, sign, x + 0.5 * h * k2, M + 0.5 * h * K2)
            k4, K4, t4 = _tangent_stage(kind, p, sign, x + h * k3, M + h * K3)
            xn = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            Mn = M + h / 6.0 * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
            ldn = ld + h / 6.0 * (t1 + 2.0 * t2 + 2.0 * t3 + t4)
            bad = (_bad_rows(xn) | ~np.all(np.isfinite(Mn), axis=(1, 2))) & alive
            alive &= ~bad
            x = np.where(alive[:, None], xn, x)
            M = np.where(alive[:, None, None], Mn, M)
            ld = np.where(alive, ldn, ld)
            for r in r_of.get(s + 1, ()):
                xs[alive, r] = x[alive]
                Ms[alive, r] = M[alive]
                lds[alive, r] = ld[alive]
                nrec[alive] = r + 1
            if not alive.any():
                break


def rhs_batch(kind, p, X, out):
    out[:] = rhs(kind, p, X)


def jac_batch(kind, p, X, out):
    out[:] = jac(kind, p, X)
