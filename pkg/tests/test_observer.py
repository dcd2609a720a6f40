import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hgosafe.errors import NotHurwitzError
from hgosafe.observer import (
    W,
    build_observer,
    eta_from_error,
    observer_rhs,
    omega_rho_contains,
    scaling_matrix,
)


def test_preset_design(di_design):
    assert np.allclose(di_design.H, [400.0, 40000.0])
    assert np.allclose(di_design.roots, [-2.0, -2.0], atol=1e-6)
    assert np.array_equal(di_design.Lambda, [[-4.0, 1.0], [-4.0, 0.0]])
    assert np.allclose(di_design.P, [[0.625, -0.5], [-0.5, 0.65625]], atol=1e-12)
    assert di_design.rho == pytest.approx(di_design.lambda_max_P)


def test_non_hurwitz_lists_roots():
    with pytest.raises(NotHurwitzError) as info:
        build_observer([-1.0, 1.0], 0.01)
    assert "offending roots" in str(info.value)


def test_observer_rhs_zero_innovation(di_system, di_design):
    xh = np.array([0.3, -1.2])
    assert np.allclose(observer_rhs(di_system, di_design, xh, 0.0, xh[0]), [-1.2, 0.0])


def test_observer_rhs_pure_innovation(di_system, di_design):
    assert np.allclose(observer_rhs(di_system, di_design, np.zeros(2), 0.0, 1.0), [400.0, 40000.0])


def test_closed_loop_observer_form(di_system, di_design):
    # xhat1' = xhat2 + (a1/eps)(x1 - xhat1), xhat2' = -b xhat1 - b xhat2 + (a2/eps^2)(x1 - xhat1)
    beta, eps = 0.2, di_design.epsilon
    rng = np.random.default_rng(3)
    for _ in range(10):
        x1, xh = rng.normal(), rng.normal(size=2)
        u = -beta * xh[0] - beta * xh[1]
        got = observer_rhs(di_system, di_design, xh, u, x1)
        want = [xh[1] + 4 / eps * (x1 - xh[0]), -beta * xh[0] - beta * xh[1] + 4 / eps ** 2 * (x1 - xh[0])]
        assert np.allclose(got, want)


def test_eta_values():
    assert np.allclose(eta_from_error([1.0, 2.0], [1.0, 2.0], 0.1, 2), 0.0)
    assert np.allclose(eta_from_error([0.1, 1.0], [0.0, 0.0], 0.1, 2), [1.0, 1.0])


@given(st.sampled_from([1.0, 0.1, 0.01]), st.integers(0, 2**31))
def test_scaling_round_trip(eps, seed):
    rng = np.random.default_rng(seed)
    x, xh = rng.normal(size=3), rng.normal(size=3)
    eta = eta_from_error(x, xh, eps, 3)
    assert np.max(np.abs(scaling_matrix(eps, 3) @ eta - (x - xh))) <= 1e-12


def test_omega_rho_membership():
    d = build_observer([4.0, 4.0], 0.01, rho=1.0)
    assert omega_rho_contains(d, np.zeros(2))
    assert not omega_rho_contains(d, np.array([1.0, 0.0]))
    eta = np.array([1.0, 0.0]) * np.sqrt(d.rho * d.epsilon ** 2 / d.P[0, 0])
    assert W(d, eta) == pytest.approx(d.rho * d.epsilon ** 2, rel=1e-14)
    assert omega_rho_contains(d, eta * (1 - 1e-12))


@given(st.integers(0, 2**31))
def test_boundary_layer_lyapunov_decay(seed):
    d = build_observer([4.0, 4.0], 0.01)
    eta = np.random.default_rng(seed).normal(size=2)
    h = 1e-3
    w_prev = W(d, eta)
    L = d.Lambda
    for _ in range(200):
        k1 = L @ eta
        k2 = L @ (eta + h / 2 * k1)
        k3 = L @ (eta + h / 2 * k2)
        k4 = L @ (eta + h * k3)
        eta = eta + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        w = W(d, eta)
        assert w < w_prev
        w_prev = w


@given(st.lists(st.floats(0.1, 5.0), min_size=1, max_size=4), st.integers(0, 2**31))
def test_hurwitz_gate(neg_roots, seed):
    alphas = np.poly(-np.array(neg_roots))[1:]
    build_observer(alphas, 0.1)
    rng = np.random.default_rng(seed)
    bad = np.array(neg_roots)
    bad[rng.integers(bad.size)] *= -1.0  # one root in the right half-plane
    with pytest.raises(NotHurwitzError):
        build_observer(np.poly(-bad)[1:], 0.1)


def test_with_epsilon_keeps_alphas(di_design):
    d = di_design.with_epsilon(0.001)
    assert d.epsilon == 0.001 and np.array_equal(d.alphas, di_design.alphas)
    assert np.allclose(d.H, [4e3, 4e6])
