import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transtab import models
from transtab.dynamics import (IntegratorConfig, VectorField, flow_with_gradient, integrate,
                               step_plan)
from transtab.errors import DimensionMismatch, JacobianUnavailable, NonFiniteState

from conftest import E, ne39_field, rel_frob


def test_saddle_forward_analytic(saddle):
    tr = integrate(saddle, [1.0, 1.0], 1.0, IntegratorConfig(h=1e-3))
    assert tr.times[-1] == 1.0
    np.testing.assert_allclose(tr.final, [E, 1 / E], atol=1e-8)


def test_saddle_backward_analytic(saddle):
    tr = integrate(saddle, [1.0, 1.0], -1.0)
    assert tr.times[-1] == -1.0
    np.testing.assert_allclose(tr.final, [1 / E, E], atol=1e-8)


def test_zero_time_single_sample(two_gen):
    tr = integrate(two_gen, [0.3, 0.1], 0.0)
    assert len(tr) == 1 and tr.times[0] == 0.0
    np.testing.assert_array_equal(tr.final, [0.3, 0.1])


def test_last_step_shortened():
    hs, rec, times = step_plan([0.0105], 1e-3)
    assert len(hs) == 11 and hs[-1] == pytest.approx(5e-4)
    assert times[-1] == 0.0105 and rec[-1] == 11


def test_uniform_times(saddle):
    tr = integrate(saddle, [1.0, 0.0], 0.5, IntegratorConfig(h=1e-2))
    gaps = np.diff(tr.times)
    assert np.all(gaps > 0)
    np.testing.assert_allclose(gaps, 1e-2, rtol=1e-12)


def test_blowup_raises():
    f = VectorField.from_callable(1, lambda x: x ** 2)
    with pytest.raises(NonFiniteState) as exc:
        integrate(f, [1.0], 2.0, IntegratorConfig(h=1e-3))
    assert exc.value.time is not None and 0.9 < exc.value.time < 1.05


def test_dimension_mismatch(saddle):
    with pytest.raises(DimensionMismatch):
        integrate(saddle, [1.0, 2.0, 3.0], 1.0)
    with pytest.raises(NonFiniteState):
        integrate(saddle, [np.nan, 0.0], 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(h=0)
    with pytest.raises(ValueError):
        IntegratorConfig(fd_epsilon=0.1)
    with pytest.raises(ValueError):
        IntegratorConfig(jacobian_mode="adjoint")


def test_saddle_gradient(saddle):
    fs = flow_with_gradient(saddle, [0.0, 2.0], 1.0)
    np.testing.assert_allclose(fs.grad_phi, np.diag([E, 1 / E]), atol=1e-8)
    assert fs.logdet == pytest.approx(0.0, abs=1e-12)


def test_gradient_identity_at_zero(two_gen):
    fs = flow_with_gradient(two_gen, [1.0, -2.0], 0.0)
    assert np.array_equal(fs.grad_phi, np.eye(2))
    assert np.array_equal(fs.phi, fs.x0)


def test_variational_needs_jacobian():
    f = VectorField.from_callable(2, lambda x: -x)
    with pytest.raises(JacobianUnavailable):
        flow_with_gradient(f, [1.0, 1.0], 1.0)
    fs = flow_with_gradient(f, [1.0, 1.0], 1.0, IntegratorConfig(jacobian_mode="finite-difference"))
    np.testing.assert_allclose(fs.grad_phi, np.eye(2) / E, rtol=1e-8)


def test_python_callable_matches_kernel(two_gen):
    p = models.SwingParams.single_machine(0.5, 0.5)
    f = VectorField.from_callable(
        2, lambda x: np.array([x[1], p.P[0] - p.D[0] * x[1] - math.sin(x[0])]),
        jac=lambda x: np.array([[0.0, 1.0], [-math.cos(x[0]), -p.D[0]]]))
    a = flow_with_gradient(f, [1.0, 0.5], 2.0)
    b = flow_with_gradient(two_gen, [1.0, 0.5], 2.0)
    np.testing.assert_allclose(a.phi, b.phi, rtol=1e-13)
    np.testing.assert_allclose(a.grad_phi, b.grad_phi, rtol=1e-12, atol=1e-14)


def test_eval_and_jacobian_examples(saddle):
    np.testing.assert_array_equal(saddle.eval([3.0, 5.0]), [3.0, -5.0])
    np.testing.assert_array_equal(saddle.jacobian([3.0, 5.0]), np.diag([1.0, -1.0]))
    eq = models.classical_swing_field(models.SwingParams.single_machine(0.0, 0.0))
    np.testing.assert_array_equal(eq.eval([0.0, 0.0]), [0.0, 0.0])


def fd_jacobian(vf, x, eps=1e-6):
    n = len(x)
    J = np.empty((n, n))
    for k in range(n):
        d = np.zeros(n)
        d[k] = eps * max(1.0, abs(x[k]))
        J[:, k] = (vf.eval(x + d) - vf.eval(x - d)) / (2 * d[k])
    return J


def test_network_jacobian_matches_fd(ne39_x0):
    vf = ne39_field()
    x = ne39_x0 + np.random.default_rng(3).normal(0, 0.2, ne39_x0.shape)
    J = vf.jacobian(x)
    assert rel_frob(fd_jacobian(vf, x), J) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 6), st.floats(-3, 3), st.floats(0.1, 2.0))
def test_semigroup_and_backward(two_gen, d, w, s):
    cfg = IntegratorConfig(h=1e-3)
    x = np.array([d, w])
    mid = integrate(two_gen, x, s, cfg).final
    full = integrate(two_gen, x, s + 0.7, cfg).final
    np.testing.assert_allclose(integrate(two_gen, mid, 0.7, cfg).final, full, atol=1e-6)
    np.testing.assert_allclose(integrate(two_gen, mid, -s, cfg).final, x, atol=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 6), st.floats(-3, 3))
def test_chain_rule(two_gen, d, w):
    x = np.array([d, w])
    a = flow_with_gradient(two_gen, x, 0.8)
    b = flow_with_gradient(two_gen, a.phi, 1.1)
    full = flow_with_gradient(two_gen, x, 1.9)
    assert rel_frob(b.grad_phi @ a.grad_phi, full.grad_phi) < 1e-5


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 6), st.floats(-3, 3))
def test_logdet_matches_liouville(two_gen, d, w):
    # trace of the swing Jacobian is -D, so log det grad_phi = -D t
    fs = flow_with_gradient(two_gen, [d, w], 2.0)
    assert fs.logdet == pytest.approx(-0.5 * 2.0, abs=1e-10)
    assert np.linalg.det(fs.grad_phi) > 0


@pytest.mark.parametrize("field", ["saddle", "two_gen", "ne39"])
def test_variational_vs_fd_all_models(field, saddle, two_gen, ne39_x0):
    vf = {"saddle": saddle, "two_gen": two_gen, "ne39": None}[field]
    x = np.array([0.3, -0.4])
    if vf is None:
        vf = ne39_field()
        x = ne39_x0 + 0.05
    a = flow_with_gradient(vf, x, 1.0)
    b = flow_with_gradient(vf, x, 1.0, IntegratorConfig(jacobian_mode="finite-difference"))
    assert rel_frob(b.grad_phi, a.grad_phi) < 1e-4
