"""Backend selection for the RK4 kernels.

The compiled numba backend is used when numba imports and the environment
variable ``TRANSTAB_NUMBA`` is not set to a false value (``0``, ``false``,
``off``, ``no``).  Otherwise the vectorized numpy backend runs.  Both expose
the same batch interface; :func:`get_backend` returns either one explicitly.
"""
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_numpy

ENV_FLAG = "TRANSTAB_NUMBA"
_FALSE = {"0", "false", "off", "no"}

# Fixed chunk size keeps results independent of the worker count on the
# numpy backend (elementwise SIMD paths depend on array position).
CHUNK = 4096


def _numba_requested():
    return os.environ.get(ENV_FLAG, "1").strip().lower() not in _FALSE


def get_backend(name=None):
    """Return the kernel module for ``name`` (``"numba"`` or ``"numpy"``)."""
    if name is None:
        name = "numba" if _numba_requested() else "numpy"
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        import numba
        if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
            # omp before tbb: avoids probing an outdated TBB install
            numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]
        from . import _kernels_numba
        return _kernels_numba
    raise ValueError(f"unknown backend {name!r}")


try:
    _active = get_backend()
    BACKEND = "numba" if _active is not _kernels_numpy else "numpy"
except ImportError:
    _active = _kernels_numpy
    BACKEND = "numpy"


def set_jobs(jobs):
    """Cap the numba thread count; a no-op on the numpy backend."""
    if BACKEND != "numba" or jobs is None:
        return
    import numba
    numba.set_num_threads(max(1, min(int(jobs), numba.config.NUMBA_NUM_THREADS)))


@dataclass
class FlowBatch:
    """States (and tangents) recorded at the requested step indices.

    ``nrec[b]`` counts how many records row ``b`` reached before blowing up;
    entries past that count are NaN.
    """
    x: np.ndarray
    M: np.ndarray | None
    logdet: np.ndarray | None
    nrec: np.ndarray


def rhs(kind, p, X, backend=None):
    mod = _active if backend is None else get_backend(backend)
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    out = np.empty_like(X)
    mod.rhs_batch(kind, p, X, out)
    return out


def jac(kind, p, X, backend=None):
    mod = _active if backend is None else get_backend(backend)
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    out = np.empty((X.shape[0], X.shape[1], X.shape[1]))
    mod.jac_batch(kind, p, X, out)
    return out


def flow(kind, p, sign, X0, hs, rec, tangent=False, backend=None):
    """Integrate a batch of initial conditions with fixed-step RK4.

    ``hs`` holds the (positive) step sizes, ``sign`` selects forward (+1) or
    backward (-1) time, and ``rec`` lists the step indices (0 = initial
    state) at which states are stored.
    """
    mod = _active if backend is None else get_backend(backend)
    X0 = np.ascontiguousarray(np.atleast_2d(X0), dtype=float)
    hs = np.ascontiguousarray(hs, dtype=float)
    rec = np.ascontiguousarray(rec, dtype=np.int64)
    nb, n = X0.shape
    nr = rec.shape[0]
    xs = np.full((nb, nr, n), np.nan)
    nrec = np.zeros(nb, dtype=np.int64)
    Ms = lds = None
    if tangent:
        Ms = np.full((nb, nr, n, n), np.nan)
        lds = np.full((nb, nr), np.nan)
    for lo in range(0, nb, CHUNK):
        sl = slice(lo, min(nb, lo + CHUNK))
        if tangent:
            mod.flow_tangent_batch(kind, p, float(sign), X0[sl], hs, rec,
                                   xs[sl], Ms[sl], lds[sl], nrec[sl])
        else:
            mod.flow_batch(kind, p, float(sign), X0[sl], hs, rec, xs[sl], nrec[sl])
    return FlowBatch(xs, Ms, lds, nrec)
