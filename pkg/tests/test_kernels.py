"""The compiled and vectorized backends must agree."""
import numpy as np
import pytest

from transtab import kernels
from transtab.dynamics import IntegratorConfig, flow_gradients, step_plan

from conftest import ne39_field

numba = pytest.importorskip("numba")


def _points(rng, dim, k, scale):
    return rng.normal(0, scale, (k, dim))


@pytest.mark.parametrize("which", ["swing", "network"])
def test_backends_agree(which, two_gen, ne39_x0):
    rng = np.random.default_rng(11)
    if which == "swing":
        vf, X = two_gen, _points(rng, 2, 40, 2.0)
    else:
        vf = ne39_field()
        X = ne39_x0 + _points(rng, 20, 8, 0.1)
    cfg = IntegratorConfig(h=1e-2)
    a = flow_gradients(vf, X, [1.0, 3.0], cfg, backend="numba")
    b = flow_gradients(vf, X, [1.0, 3.0], cfg, backend="numpy")
    assert np.array_equal(a.failed, b.failed)
    np.testing.assert_allclose(a.phi, b.phi, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a.grad, b.grad, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(a.logdet, b.logdet, rtol=1e-12, atol=1e-12)


def test_state_only_flow_agrees(two_gen):
    X = np.random.default_rng(2).normal(0, 2, (30, 2))
    hs, rec, _ = step_plan([2.0, 5.0], 1e-2)
    a = kernels.flow(two_gen.kind, two_gen.params, -1.0, X, hs, rec, backend="numba")
    b = kernels.flow(two_gen.kind, two_gen.params, -1.0, X, hs, rec, backend="numpy")
    assert np.array_equal(a.nrec, b.nrec)
    np.testing.assert_allclose(a.x, b.x, rtol=1e-12, atol=1e-12)


def test_blowup_rows_frozen_as_nan():
    from transtab.dynamics import VectorField
    from transtab.models import affine_field
    vf = affine_field([[5.0, 0.0], [0.0, -1.0]])
    X = np.array([[1.0, 1.0], [0.0, 1.0]])
    for backend in ("numba", "numpy"):
        fb = kernels.flow(vf.kind, vf.params, 1.0, X, *step_plan([3.0, 8.0], 1e-2)[:2],
                          tangent=True, backend=backend)
        assert list(fb.nrec) == [1, 2]
        assert np.isnan(fb.x[0, 1]).all() and np.isfinite(fb.x[1]).all()
    assert isinstance(vf, VectorField)


def test_backend_selection(monkeypatch):
    monkeypatch.setenv(kernels.ENV_FLAG, "0")
    assert kernels.get_backend() is kernels._kernels_numpy
    monkeypatch.setenv(kernels.ENV_FLAG, "1")
    assert kernels.get_backend().__name__.endswith("_kernels_numba")
    with pytest.raises(ValueError):
        kernels.get_backend("cuda")
