import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import tba_first_correction
from twistor_tba.lattice_tba import (BranchError, ChargeLattice, DivergenceError, RayGuardError, SpectrumData,
                                     bessel_estimate, correction_bound, evaluate_x, jump_factor, measure_A,
                                     one_ray_spectrum, sigma_extend, tba_solve, two_ray_spectrum, x_semiflat)
from twistor_tba.numerics import bessel_k

E, M = (1, 0), (0, 1)


@pytest.fixture(scope="module")
def one_ray():
    return tba_solve(one_ray_spectrum(), 1.0)


@pytest.fixture(scope="module")
def two_ray():
    return tba_solve(two_ray_spectrum(Ze=0.3 + 1.0j, Zm=1.2 - 0.2j, theta=(0.4, -0.7)), 1.0)


# quadratic refinement ------------------------------------------------------------

def test_sigma_examples():
    lat = ChargeLattice([[0, 1], [-1, 0]])
    assert sigma_extend(lat, [-1, 1], (1, 1)) == 1
    assert sigma_extend(lat, [-1, 1], (0, 0)) == 1
    with pytest.raises(ValueError):
        sigma_extend(lat, [2, 1], (1, 0))


def _sigma_by_steps(lat, sg, steps):
    # build up a charge one signed generator at a time using the refinement identity
    acc = np.zeros(lat.rank, dtype=int)
    s = 1
    for i, sign in steps:
        e = np.zeros(lat.rank, dtype=int)
        e[i] = sign
        s *= sg[i] * (-1) ** (lat.pair(acc, e) % 2)
        acc = acc + e
    return tuple(int(v) for v in acc), s


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 3), st.integers(0, 2 ** 31 - 1))
def test_sigma_path_independence(rank, seed):
    rng = np.random.default_rng(seed)
    U = np.triu(rng.integers(-2, 3, size=(rank, rank)), 1)
    lat = ChargeLattice(U - U.T)
    sg = rng.choice([-1, 1], size=rank)
    gens = [(i, s) for i in range(rank) for s in (1, -1)]
    seen = {}
    for n in range(5):
        for steps in itertools.product(gens, repeat=n):
            g, s = _sigma_by_steps(lat, sg, steps)
            seen.setdefault(g, set()).add(s)
    for g, vals in seen.items():
        assert vals == {sigma_extend(lat, sg, g)}


def test_spectrum_refinement_identity():
    sp = two_ray_spectrum(sigma=(-1, 1))
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = (tuple(rng.integers(-3, 4, size=2)) for _ in range(2))
        ab = tuple(np.add(a, b))
        lhs = sp.sigma_of(a) * sp.sigma_of(b)
        assert lhs == sp.sigma_of(ab) * sp.sigma_of((0, 0)) * (-1) ** (sp.lattice.pair(a, b) % 2)


# semiflat coordinates -------------------------------------------------------------

def test_x_semiflat_examples():
    sp = one_ray_spectrum()
    assert abs(x_semiflat(sp, E, -1.0, 1.0) + 1) < 1e-15
    sp2 = one_ray_spectrum(Ze=-1.0 + 0.5j)
    mods = [abs(x_semiflat(sp2, E, z, 1.0)) for z in (1e-1, 1e-2, 1e-3)]
    assert mods[0] > mods[1] > mods[2] and mods[2] < 1e-300
    with pytest.raises(ValueError):
        x_semiflat(sp, E, 0.0, 1.0)


def test_x_semiflat_reality():
    rng = np.random.default_rng(3)
    sp = two_ray_spectrum(Ze=0.3 + 1.0j, Zm=1.2 - 0.2j, theta=(0.4, -0.7))
    for _ in range(20):
        g = tuple(rng.integers(-2, 3, size=2))
        z = complex(*rng.normal(size=2))
        v = x_semiflat(sp, g, z, 0.8) * np.conj(x_semiflat(sp, g, -1 / np.conj(z), 0.8))
        assert abs(v - 1) < 1e-12


def test_x_semiflat_multiplicative_unsigned():
    sp = two_ray_spectrum(Ze=0.3 + 1.0j, Zm=1.2 - 0.2j, theta=(0.4, -0.7))
    z = 0.4 - 0.9j
    a = x_semiflat(sp, E, z, 1.0, signed=False) * x_semiflat(sp, M, z, 1.0, signed=False)
    assert abs(a / x_semiflat(sp, (1, 1), z, 1.0, signed=False) - 1) < 1e-13


# jump factors ---------------------------------------------------------------------

def test_jump_factor_examples():
    sp = one_ray_spectrum()
    ph = float(np.angle(-sp.Z_of(E)))
    g = (0, -1)  # <g, E> = 1
    assert sp.lattice.pair(g, E) == 1
    assert abs(jump_factor(sp, ph, g, {E: 0.1}) - 0.9) < 1e-15
    assert jump_factor(sp, ph, E, {E: 0.1}) == 1
    sp2 = one_ray_spectrum(omega=-2)
    assert abs(jump_factor(sp2, ph, g, {E: 0.1}) - 0.9 ** -2) < 1e-14
    assert round(abs(jump_factor(sp2, ph, g, {E: 0.1})), 4) == 1.2346
    with pytest.raises(BranchError):
        jump_factor(sp, ph, g, {E: 1.0})


# solver ---------------------------------------------------------------------------

def test_no_bps_states_is_semiflat():
    lat = ChargeLattice([[0, 1], [-1, 0]])
    sp = SpectrumData(lat, [1j, 1.0], [0.2, 0.3], [1, 1], {})
    t = tba_solve(sp, 1.0)
    assert t.iterations == 1 and t.last_change == 0
    z = np.array([0.3 + 0.2j, -1.0, 2j])
    for g in (E, M, (2, -1)):
        assert np.array_equal(evaluate_x(t, g, z), x_semiflat(sp, g, z, 1.0, signed=False))
    assert correction_bound(t, M, -1.0) == 0


def test_one_ray_matches_direct_quadrature(one_ray):
    sp = one_ray.spectrum
    assert np.array_equal(one_ray.correction(E, np.array([-1.0, 0.3 + 0.4j])), np.zeros(2))
    want = sum(tba_first_correction(sp.Z_of(b), sp.theta_of(b), 1.0, -1.0, pair=sp.lattice.pair(M, b))
               for b in sp.support)
    assert abs(one_ray.correction(M, -1.0)[0] - want) < 1e-8


def test_one_ray_converges_in_two(one_ray):
    assert one_ray.iterations <= 2 and one_ray.last_change < 1e-12


def test_jump_residual(one_ray, two_ray):
    for t in (one_ray, two_ray):
        for ray in t.rays:
            for s in (0.3, 0.7, 1.0, 1.6, 3.0):
                z0 = ray.direction * s
                for g in (E, M, (1, 1)):
                    assert t.jump_residual(g, z0) < 1e-6


def test_one_sided_ratio_is_inverse_jump(one_ray):
    ray = one_ray.ray_of(E)
    z0 = ray.direction * 0.8
    xp = evaluate_x(one_ray, M, z0, side=+1)[0]
    xm = evaluate_x(one_ray, M, z0, side=-1)[0]
    S = jump_factor(one_ray.spectrum, ray.phase, M, {E: evaluate_x(one_ray, E, z0, side=+1)[0]})
    assert abs(xp / xm - 1 / S) < 1e-6


def test_reality(two_ray):
    rng = np.random.default_rng(11)
    for _ in range(10):
        z = complex(*rng.normal(size=2))
        for g in (E, M):
            assert two_ray.reality_residual(g, z) < 1e-8


def test_multiplicativity(two_ray):
    z = np.array([0.5 + 0.1j, -0.7 + 0.8j, 1.3 - 0.4j])
    lhs = evaluate_x(two_ray, (1, 1), z)
    rhs = evaluate_x(two_ray, E, z) * evaluate_x(two_ray, M, z)
    assert np.max(np.abs(lhs / rhs - 1)) < 1e-8
    s = evaluate_x(two_ray, (1, 1), z, signed=True)
    assert np.max(np.abs(s + lhs)) == 0


def test_two_initializations_agree():
    sp = two_ray_spectrum(Ze=0.3 + 1.0j, Zm=1.2 - 0.2j, theta=(0.4, -0.7))
    rng = np.random.default_rng(5)
    zs = rng.normal(size=10) + 1j * rng.normal(size=10)
    for g in (E, M):
        A = measure_A(sp, 1.0, g, zs)
        assert np.max(np.abs(A / A[0] - 1)) < 1e-8


def test_branch_condition_on_nodes(two_ray):
    for ray in two_ray.rays:
        assert np.all(np.isfinite(ray.L))
        assert np.array_equal(ray.y, -ray.y[::-1])
        assert np.all(np.abs(-np.expm1(ray.L)) < 1)


def test_correction_bound_at_R2():
    t = tba_solve(one_ray_spectrum(), 2.0)
    measured = abs(t.correction(M, -1.0)[0])
    bound = correction_bound(t, M, -1.0)
    est = bessel_estimate(t, M, -1.0)
    assert measured <= bound
    ab = est / bessel_k(0, 4 * math.pi)
    for v in (measured, bound):
        assert ab * bessel_k(0, 4 * math.pi) / 3 <= v <= 3 * ab * bessel_k(0, 4 * math.pi)


def test_correction_decay_slope():
    Rs = np.array([1.0, 2.0, 3.0, 4.0])
    c = [abs(tba_solve(one_ray_spectrum(), R).correction(M, -1.0)[0]) for R in Rs]
    slope = np.polyfit(Rs, np.log(c), 1)[0]
    assert abs(slope / (-2 * math.pi) - 1) < 0.05


# errors ---------------------------------------------------------------------------

def test_guard_needs_side(one_ray):
    z0 = one_ray.ray_of(E).direction * (1 + 1e-3j * 1e-4)
    with pytest.raises(RayGuardError):
        evaluate_x(one_ray, M, z0)
    assert np.isfinite(evaluate_x(one_ray, M, z0, side=-1)[0])


def test_solver_errors():
    sp = two_ray_spectrum(Ze=0.3 + 1.0j, Zm=1.2 - 0.2j)
    with pytest.raises(DivergenceError):
        tba_solve(sp, 1.0, max_iter=1)
    with pytest.raises(BranchError):
        tba_solve(sp, 1.0, init={b: (lambda z: 2.0 + 0 * z) for b in sp.support})
    with pytest.raises(ValueError):
        tba_solve(two_ray_spectrum(Ze=1.0, Zm=2.0), 1.0)
    with pytest.raises(ValueError):
        tba_solve(sp, 0.0)


def test_spectrum_validation():
    lat = ChargeLattice([[0, 1], [-1, 0]])
    with pytest.raises(ValueError):
        SpectrumData(lat, [1j, 1.0], [0, 0], [1, 1], {(0, 0): 1})
    with pytest.raises(ValueError):
        SpectrumData(lat, [1j, 1j], [0, 0], [1, 1], {(1, -1): 1})
    with pytest.raises(ValueError):
        ChargeLattice([[0, 1], [1, 0]])


def test_from_dict_towers_and_roundtrip():
    d = {"pairing": [[0, 1], [-1, 0]],
         "generators": [{"Z": [0, 1], "Omega": 1}, {"Z": [1, 0]}],
         "support": [{"charge": [-1, 0], "Omega": 1}],
         "towers": [{"base": [0, 1], "step": [1, 0], "Omega": 2, "m_max": 2, "R": 1.5}]}
    sp = SpectrumData.from_dict(d)
    assert sp.omega == {(1, 0): 1, (-1, 0): 1, (0, 1): 2, (1, 1): 2, (2, 1): 2}
    assert abs(sp.tail_bound - math.exp(-3 * 1.5)) < 1e-15
    back = SpectrumData.from_dict(sp.to_dict())
    assert back.omega == sp.omega and np.array_equal(back.Z, sp.Z)
    bad = dict(d, support=[{"charge": [1, 1], "Omega": 1, "sigma": 1}])  # identity forces -1
    with pytest.raises(ValueError):
        SpectrumData.from_dict(bad)
