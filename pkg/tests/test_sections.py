import numpy as np
import pytest

from twistor_tba.numerics import ContourPath
from twistor_tba.quaddiff import QuadraticDifferential, StopRules, trace_trajectory
from twistor_tba.sections import (Curve, DegenerateWedgeError, ErrorModel, HiggsLocalModel, PoleField,
                                  QuadrilateralModel, build_connector, check_reality, dlog_x,
                                  in_half_plane, leading_exponent, leading_terms, liouville_exponent,
                                  small_flat_section, standard_example, transport_section, wedge,
                                  x_coordinate)

A1 = PoleField([1, -1, 2], [0.3 + 0.1j, -0.2, 0.05j], 0.1)
A2 = PoleField([0.5j, -2], [0.1j, 0.2], 0.05)
ZETA = 0.7 + 0.2j


@pytest.fixture(scope="module")
def quad():
    return standard_example(0.0)


@pytest.fixture(scope="module")
def model(quad):
    return HiggsLocalModel(quad.q, A1, A2, ErrorModel(C=1.0), 10.0, ZETA, 0.0)


def _spiral(m=1.0 + 0.4j, theta=0.3, T=5.0):
    q = QuadraticDifferential([], [0], norm=m * m)
    return q, trace_trajectory(q, 1.0, theta, -1, StopRules(max_length=T), branch=m)


def test_half_plane():
    assert in_half_plane(1j, np.pi / 2) and not in_half_plane(-1.0, 0.0) and not in_half_plane(0, 0.0)
    q, _ = _spiral()
    with pytest.raises(ValueError):
        HiggsLocalModel(q, zeta=-1.0 + 0.1j, theta=0.0)


def test_leading_terms_refuses_zeta_outside(quad):
    q, tr = _spiral(theta=0.3)
    m = HiggsLocalModel(q, zeta=np.exp(1j * 0.3), theta=0.3)
    q2, tr2 = _spiral(theta=0.3 + np.pi * 0.9)
    with pytest.raises(ValueError):
        leading_terms(m, tr2)


def test_leading_terms_trivial():
    th = 0.3
    q, tr = _spiral(theta=th)
    m = HiggsLocalModel(q, R=2.0, zeta=np.exp(1j * th), theta=th)
    l1, l2, L1, L2 = leading_terms(m, tr)
    assert np.max(np.abs(l1 - 4)) < 1e-12 and np.max(np.abs(l2 - 4)) < 1e-12
    assert np.max(np.abs(L1 - 4 * (tr.t - tr.t[0]))) < 1e-10
    assert np.max(np.abs(L2 - 4 * (tr.t - tr.t[0]))) < 1e-10


@pytest.mark.parametrize("rho", [0.3, 0.8, 1.7])
def test_leading_terms_am_gm(rho):
    th = 0.3
    q, tr = _spiral(theta=th)
    m = HiggsLocalModel(q, R=2.0, zeta=rho * np.exp(1j * th), theta=th)
    l1, l2, _, _ = leading_terms(m, tr)
    assert np.max(np.abs(l1 - 2.0 * (1 / rho + rho))) < 1e-12
    assert np.all(l1.real > 4.0)


def test_leading_terms_log_spiral_constant():
    mm, th = 1.0 + 0.4j, 0.3
    q, tr = _spiral(mm, th)
    m = HiggsLocalModel(q, PoleField([0], [1.0]), R=2.0, zeta=np.exp(1j * th), theta=th)
    l1, _, _, _ = leading_terms(m, tr)
    # a1 z' = -e^{i theta}/m along the spiral; lambda_1 = 2R + 2i Im(a1 z')
    assert np.max(np.abs(l1 - (4 + 2j * (-np.exp(1j * th) / mm).imag))) < 1e-12


def test_leading_terms_real_part_increasing(model, quad):
    _, _, L1, L2 = leading_terms(model, quad.sides[0], np.linspace(-2, 2, 50))
    assert np.all(np.diff(L1.real) > 0) and np.all(np.diff(L2.real) > 0)


def test_leading_exponent_cancellation():
    # Z = i, theta = 0, R = 1, zeta = -1: exponent -pi i + pi i = 0, X = -1
    lg = leading_exponent(1j, 0.0, 1.0, -1.0)
    assert abs(np.exp(lg) + 1) < 1e-15


def test_error_profile_bounds(model, quad):
    z = quad.sides[0](np.linspace(-3, 3, 200))[0]
    E = model.error.hat(z, model.R, quad.q.pole_locs)
    r = np.min(np.abs(z[:, None] - quad.q.pole_locs[None, :]), axis=1)
    assert np.all(np.abs(E) <= model.error.amplitude(model.R) * r[:, None, None] ** model.error.mu * (1 + 1e-12))


def test_section_zero_error_exact(model, quad):
    s = small_flat_section(model.with_(error=ErrorModel()), quad.sides[0], 1)
    assert s.remainder_sup() == 0.0


def test_section_remainder_ratio(model, quad):
    # first-order scaling C e^{-delta R}; the quadratic correction is bounded by the R = 10 remainder
    s10 = small_flat_section(model, quad.sides[0], 1).remainder_sup()
    s20 = small_flat_section(model.with_(R=20.0), quad.sides[0], 1).remainder_sup()
    assert s20 / s10 <= np.exp(-0.5 * 10) * (1 + 2 * s10)


def test_section_flipped_limit(model, quad):
    s = small_flat_section(model, quad.sides[0], -1)
    v = s.vector(s.leg.t_of(30.0))[0]
    assert abs(v[0] - 1) < 1e-6 and abs(v[1]) < 1e-6
    s2 = small_flat_section(model, quad.sides[0], 1)
    v2 = s2.vector(s2.leg.t_of(30.0))[0]
    assert abs(v2[1] - 1) < 1e-6 and abs(v2[0]) < 1e-6


def test_connector_lengths_agree(quad):
    p = quad.q.pole_locs[quad.vertices[0]]
    L = [build_connector(quad.q, quad.sides[0], quad.sides[1], p, quad.sigma(0, 0), depth=d).length
         for d in (0.1, 0.2, 0.3)]
    assert max(L) - min(L) < 1e-6


def test_transport_zero_error(model, quad):
    m0 = model.with_(error=ErrorModel())
    con = quad.connectors[0]
    s = small_flat_section(m0, quad.sides[0], quad.sigma(0, 0), -0.1 + min(0, -con.tp_hit))
    t = transport_section(m0, s, con, target_curve=quad.sides[1])
    assert abs(t.eps) < 1e-12 and t.mismatch < 1e-12


def test_transport_eps_decay(model, quad):
    con = quad.connectors[0]
    sg = quad.sigma(0, 0)
    eps = []
    for R in (10.0, 20.0):
        m = model.with_(R=R)
        s = small_flat_section(m, quad.sides[0], sg, min(0.0, sg * con.tp_hit) - 0.1)
        eps.append(abs(transport_section(m, s, con, target_curve=quad.sides[1]).eps))
    assert eps[0] <= model.error.amplitude(10.0) * 10
    assert eps[1] / eps[0] <= np.exp(-0.5 * 10) * (1 + 2 * eps[0])


def test_wedge_zero_error_and_bound(model, quad):
    side = quad.sides[1]
    for C in (0.0, 1.0):
        m = model.with_(error=ErrorModel(C=C))
        sa = small_flat_section(m, side, quad.sigma(1, 0))
        sb = small_flat_section(m, side, quad.sigma(1, 1))
        xr, yr = sa.remainder_sup(), sb.remainder_sup()
        for t in (-0.05, 0.0, 0.05):
            w = wedge(sa, sb, t, log=True)
            lead = sa.log_prefactor(t)[0] + sb.log_prefactor(t)[0]
            # nominal determinant of (0,1)/(1,0) frames is -1 or 1
            r = abs(abs(np.exp(w - lead)) - 1)
            assert r <= xr + yr + xr * yr + 1e-13
            if C == 0:
                assert r < 1e-14


def test_wedge_degenerate(model, quad):
    s = small_flat_section(model, quad.sides[0], 1)
    with pytest.raises(DegenerateWedgeError):
        wedge(s, s, 0.0)


def test_liouville_traceless(model):
    m = model.with_(a2=-model.a1)
    assert abs(liouville_exponent(m, ContourPath.circle(0, 1.5))) < 1e-14
    e = liouville_exponent(model, ContourPath.circle(0, 1.5))
    assert abs(e.real) < 1e-14  # I - conj(I) is imaginary


def test_x_coordinate_zero_error(model, quad):
    x = x_coordinate(model.with_(error=ErrorModel()), quad)
    assert abs(x.r_q) < 1e-6
    assert abs(np.exp(x.leading_log - leading_exponent(x.Z, x.theta_E, model.R, model.zeta))) == pytest.approx(1, abs=1e-12)


def test_x_coordinate_bound_and_rescale(model, quad):
    x = x_coordinate(model, quad)
    assert abs(x.r_q) <= x.bound
    xr = x_coordinate(model, quad, rescale=[2.0, 1j, -0.3 + 0.5j, 1e3])
    assert abs(xr.log_value - x.log_value) < 1e-8


def test_remainder_decay_rate(model, quad):
    Rs = [5.0, 10.0, 15.0, 20.0]
    rq = [abs(x_coordinate(model.with_(R=R), quad).r_q) for R in Rs]
    slope = np.polyfit(Rs, np.log(rq), 1)[0]
    assert abs(slope + model.error.delta) < 0.1 * model.error.delta


def _moved(quad, side, t):
    pts = list(quad.points)
    pts[side] = quad.sides[side](np.array([t]))[0][0]
    return QuadrilateralModel(quad.q, quad.theta, quad.vertices, pts)


def test_evaluation_point_independence(model, quad):
    m0 = model.with_(error=ErrorModel())
    x0 = x_coordinate(m0, quad).log_value
    for side in (0, 2):
        assert abs(x_coordinate(m0, _moved(quad, side, 0.3)).log_value - x0) < 1e-8
    # with the (non-flat) synthetic error the change stays inside the error bound
    x1 = x_coordinate(model, quad)
    moved = x_coordinate(model, _moved(quad, 0, 0.3))
    assert abs(np.expm1(moved.log_value - x1.log_value)) <= x1.bound


def test_reality(model, quad):
    assert check_reality(model.with_(error=ErrorModel()), quad) < 1e-10
    assert check_reality(model, quad) < 1e-6


def test_dlog_simple_pole(model, quad):
    vals = []
    for r in (1e-1, 1e-2, 1e-3):
        m = model.with_(zeta=r * np.exp(0.2j), R=10.0)
        an, fd = dlog_x(m, quad)
        assert abs(an - fd) < 1e-6 * max(1.0, abs(an))
        vals.append(abs(r * np.exp(0.2j) * an))
    assert max(vals) < 1.0 and vals[2] <= vals[0]


def test_d_wedge_suppressed(model, quad):
    side = quad.sides[1]
    d, rem = [], []
    for R in (10.0, 20.0):
        m = model.with_(R=R)
        sa = small_flat_section(m, side, quad.sigma(1, 0), derivative=True)
        sb = small_flat_section(m, side, quad.sigma(1, 1), derivative=True)
        x, y = sa.vector(0.0)[0], sb.vector(0.0)[0]
        dx, dy = sa.dvector(0.0)[0], sb.dvector(0.0)[0]
        d.append(abs(dx[0] * y[1] - dx[1] * y[0] + x[0] * dy[1] - x[1] * dy[0]))
        rem.append(sa.remainder_sup() + sb.remainder_sup())
    # first order scales like C e^{-delta R}; the quadratic part is relatively O(remainder)
    assert d[1] / d[0] <= np.exp(-0.5 * 10) * (1 + 2 * rem[0])


def test_model_round_trip(model, quad):
    m2 = HiggsLocalModel.from_dict(model.to_dict())
    z = np.array([0.3 + 0.2j])
    assert np.allclose(m2.error.hat(z, 10, quad.q.pole_locs), model.error.hat(z, 10, quad.q.pole_locs))
    q2 = QuadrilateralModel.from_dict(quad.q, quad.to_dict())
    assert q2.vertices == quad.vertices and np.allclose(q2.points, quad.points)
