import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twistor_tba.volterra import (ContractionError, GridSpec, IvpAtInfinity, holomorphy_residual,
                                  picard_bound, solve_derivative, solve_finite, solve_ivp_infinity)

from oracles import volterra_dense_picard, volterra_exp_closed


def exp_problem(c=0.5, a=lambda t: np.ones(np.shape(t) + (1,), dtype=complex), T=0.0, a_inf=1.0):
    """x(t) = a(t) - int_t^inf c e^{-s} x(s) ds."""
    return IvpAtInfinity(T, a, lambda t, s: np.ones(np.broadcast(t, s).shape + (1, 1)),
                         lambda s: c * np.exp(-np.asarray(s))[..., None, None], 1,
                         np.array([a_inf]), 1.0)


def test_closed_form():
    sol = solve_ivp_infinity(exp_problem())
    t = np.linspace(0, 10, 201)
    assert np.max(np.abs(sol(t)[:, 0] - volterra_exp_closed(t))) < 1e-8
    assert abs(sol(0.0)[0, 0] - 0.60653065971263342) < 1e-8


def test_zero_kernel_and_zero_data():
    a = lambda t: np.stack([np.cos(t), np.sin(t)], -1).astype(complex) * 0 + np.array([1.0, 2.0])
    prob = IvpAtInfinity(0.0, a, lambda t, s: np.zeros(np.broadcast(t, s).shape + (2, 2)),
                         lambda s: np.exp(-np.asarray(s))[..., None, None] * np.eye(2), 2,
                         np.array([1.0, 2.0]), 1.0)
    sol = solve_ivp_infinity(prob)
    assert np.allclose(sol.values, [1.0, 2.0], atol=1e-15)
    zero = solve_ivp_infinity(exp_problem(a=lambda t: np.zeros(np.shape(t) + (1,), dtype=complex), a_inf=0.0))
    assert np.max(np.abs(zero.values)) == 0


def test_picard_bound():
    lam, bound = picard_bound(exp_problem())
    assert abs(lam - 0.5) < 1e-10 and abs(bound - 2.0) < 1e-9
    sol = solve_ivp_infinity(exp_problem())
    assert sol.sup_norm() <= bound + 1e-12
    lam0, b0 = picard_bound(exp_problem(c=0.0))
    assert lam0 == 0 and abs(b0 - 1.0) < 1e-15


def test_contraction_refusal():
    lam, bound = picard_bound(exp_problem(c=1.0))
    assert abs(lam - 1.0) < 1e-9
    assert bound == np.inf
    with pytest.raises(ContractionError):
        solve_ivp_infinity(exp_problem(c=1.0))


def test_geometric_convergence():
    sol = solve_ivp_infinity(exp_problem(c=0.8))
    h = np.array(sol.history)
    h = h[h > 1e-13]
    assert np.all(h[1:] / h[:-1] <= sol.lam + 1e-6)


@settings(max_examples=8, deadline=None)
@given(st.floats(-2, 2), st.floats(0.1, 3))
def test_uniqueness_from_random_starts(c0, w):
    prob = exp_problem()
    s1 = solve_ivp_infinity(prob, start=lambda t: np.full(np.shape(t) + (1,), c0, dtype=complex))
    s2 = solve_ivp_infinity(prob, start=lambda t: np.cos(w * np.asarray(t))[..., None] + 0j)
    assert np.max(np.abs(s1.values - s2.values)) < 1e-10


@settings(max_examples=8, deadline=None)
@given(st.floats(1e-4, 0.1), st.floats(0.2, 3))
def test_continuous_dependence(eta, w):
    base = solve_ivp_infinity(exp_problem())
    a = lambda t: (1 + eta * np.sin(w * np.asarray(t)))[..., None] + 0j
    pert = solve_ivp_infinity(exp_problem(a=a, a_inf=None))
    assert np.max(np.abs(pert.values - base.values)) <= eta / (1 - 0.5) + 1e-10


def _eps_problem(eps):
    return exp_problem(c=eps)


def test_derivative_closed_form_and_fd():
    eps = 0.5
    base = solve_ivp_infinity(_eps_problem(eps))
    d = solve_derivative(_eps_problem(eps), None, base, dB=lambda s: np.exp(-np.asarray(s))[..., None, None])
    assert abs(d(0.0)[0, 0] + np.exp(-0.5)) < 1e-6
    h = 1e-5
    fd = (solve_ivp_infinity(_eps_problem(eps + h))(base.grid) - solve_ivp_infinity(_eps_problem(eps - h))(base.grid)) / (2 * h)
    assert np.max(np.abs(d.values - fd)) < 1e-6


def test_derivative_zero_and_shifted_family():
    base = solve_ivp_infinity(exp_problem(c=0.3))
    d0 = solve_derivative(exp_problem(c=0.3), None, base)
    assert np.max(np.abs(d0.values)) == 0
    d = solve_derivative(exp_problem(c=0.3), None, base, dB=lambda s: np.exp(-np.asarray(s))[..., None, None])
    h = 1e-5
    fd = (solve_ivp_infinity(exp_problem(c=0.3 + h))(base.grid) - solve_ivp_infinity(exp_problem(c=0.3 - h))(base.grid)) / (2 * h)
    assert np.max(np.abs(d.values - fd)) < 1e-6


def test_holomorphic_dependence():
    f = lambda e: solve_ivp_infinity(exp_problem(c=e))(np.array([0.0, 0.7, 2.0]))[:, 0]
    assert holomorphy_residual(f, 0.4 + 0.1j) < 1e-6


def test_finite_trivial():
    sol = solve_finite(lambda t, s: np.zeros(np.broadcast(t, s).shape + (2, 2)), 0.0, 2.0, [1.0, 1j])
    assert np.allclose(sol.values, [1.0, 1j], atol=1e-15)


def test_finite_against_dense_picard():
    sol = solve_finite(lambda t, s: 0.1 * np.ones(np.broadcast(t, s).shape + (1, 1)), 0.0, 1.0, [1.0])
    t, x = volterra_dense_picard(0.1, 0.0, 1.0, 1.0)
    got = sol(t[::500])[:, 0].real
    assert np.max(np.abs(got - x[::500])) < 1e-8
    assert np.max(np.abs(got - np.exp(0.1 * (t[::500] - 1)))) < 1e-12


def test_finite_suppressed_kernel():
    s = np.exp(-10.0)
    K = lambda t, u: s * np.array([[0.3, 1.0], [-0.5, 0.2]]) * np.ones(np.broadcast(t, u).shape + (1, 1))
    xb = np.array([0.6, -0.8j])
    sol = solve_finite(K, 0.0, 3.0, xb)
    dev = np.max(np.linalg.norm(sol.values - xb, axis=-1))
    assert dev <= 1e-3 * np.linalg.norm(xb)
    assert np.max(np.linalg.norm(sol.values, axis=-1)) <= np.linalg.norm(xb) * (1 + 3 * 1.2 * s) + 1e-12


def test_grid_covers_interval():
    sol = solve_ivp_infinity(exp_problem(), GridSpec(T_max=25.0))
    assert sol.T == 0.0 and sol.T_max == 25.0 and np.all(np.diff(sol.grid) > 0)
    assert sol.err >= 0
