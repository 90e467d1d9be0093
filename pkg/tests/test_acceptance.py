"""Acceptance criteria, one test each; every test records a pass/fail line that is
printed in the terminal summary (and directly when run as a script)."""
import math
import tempfile
import time
from pathlib import Path

import numpy as np

from oracles import K0_1, K1_1, bessel_cosh_quad, bessel_mp, tba_first_correction, volterra_exp_closed
from twistor_tba import lattice_tba as tba
from twistor_tba import metric as met
from twistor_tba.cli_io import main
from twistor_tba.numerics import ContourPath, bessel_k
from twistor_tba.quaddiff import QuadraticDifferential, StopRules, find_saddles, period, separatrices, trace_trajectory
from twistor_tba.sections import (ErrorModel, HiggsLocalModel, PoleField, check_reality, dlog_x, leading_exponent,
                                  standard_example, x_coordinate)
from twistor_tba.volterra import (IvpAtInfinity, holomorphy_residual, picard_bound, solve_derivative,
                                  solve_ivp_infinity)

LINES = []


def _report(n, checks):
    """checks: list of (label, value, ok). Records one line and asserts all ok."""
    ok = all(c[2] for c in checks)
    detail = "; ".join(f"{lab} {val}" + ("" if good else " [FAIL]") for lab, val, good in checks)
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    LINES.append(line)
    assert ok, line


def _exp_problem(c=0.5):
    return IvpAtInfinity(0.0, lambda t: np.ones(np.shape(t) + (1,), dtype=complex),
                         lambda t, s: np.ones(np.broadcast(t, s).shape + (1, 1)),
                         lambda s: c * np.exp(-np.asarray(s))[..., None, None], 1, np.array([1.0]), 1.0)


def test_criterion_1_volterra_closed_form():
    t0 = time.perf_counter()
    sol = solve_ivp_infinity(_exp_problem())
    t = np.linspace(0, 10, 1001)
    err = float(np.max(np.abs(sol(t)[:, 0] - volterra_exp_closed(t))))
    lam, bound = picard_bound(_exp_problem())
    dt = time.perf_counter() - t0
    _report(1, [("sup error", f"{err:.2e} < 1e-8", err < 1e-8),
                ("Picard bound", f"sup|x| {sol.sup_norm():.6f} <= {bound:.6f} <= 2",
                 sol.sup_norm() <= bound and bound <= 2 + 1e-9),
                ("runtime", f"{dt:.2f} s < 1 s", dt < 1.0)])


def test_criterion_2_derivative_consistency():
    eps, h = 0.5, 1e-5
    base = solve_ivp_infinity(_exp_problem(eps))
    d = solve_derivative(_exp_problem(eps), None, base, dB=lambda s: np.exp(-np.asarray(s))[..., None, None])
    fd = (solve_ivp_infinity(_exp_problem(eps + h))(base.grid)
          - solve_ivp_infinity(_exp_problem(eps - h))(base.grid)) / (2 * h)
    dfd = float(np.max(np.abs(d.values - fd)))
    cr = holomorphy_residual(lambda e: solve_ivp_infinity(_exp_problem(e))(np.array([0.0, 0.7, 2.0]))[:, 0],
                             0.4 + 0.1j)
    _report(2, [("derivative vs FD", f"{dfd:.2e} < 1e-6", dfd < 1e-6),
                ("Cauchy-Riemann", f"{cr:.2e} < 1e-6", cr < 1e-6)])


def test_criterion_3_trajectory_oracles():
    spiral = []
    for m, th in ((1 + 0.5j, 0.3), (0.7 - 1.1j, -1.0), (2.0, 2.5)):
        q = QuadraticDifferential([], [0], norm=m * m)
        tr = trace_trajectory(q, 1.0, th, -1, StopRules(max_length=3.0), branch=m)
        spiral.append(float(np.max(np.abs(tr.z - np.exp(-(np.exp(1j * th) / m) * tr.t)))))
    a = np.sort(separatrices(QuadraticDifferential([0], norm=1), 0, 0.0).angles)
    gaps = np.diff(np.concatenate([a, [a[0] + 2 * np.pi]]))
    sep = float(np.max(np.abs(gaps - 2 * np.pi / 3)))
    zz = QuadraticDifferential([1, -1], norm=1)
    ev = find_saddles(zz, np.linspace(0, np.pi, 32, endpoint=False))
    sad = abs(ev[0].theta_c - np.pi / 2) if len(ev) == 1 else math.inf
    p1 = abs(period(QuadraticDifferential([], [0], norm=1), ContourPath.circle(0, 1)) - 2j)
    Zc = period(zz, ContourPath.circle(0, 2))
    p2 = min(abs(Zc - 1j), abs(Zc + 1j))
    _report(3, [("log-spiral", f"{max(spiral):.2e} < 1e-6", max(spiral) < 1e-6),
                ("separatrix spacing", f"{sep:.2e} < 1e-3", sep < 1e-3),
                ("saddle", f"{len(ev)} event, |theta_c - pi/2| {sad:.2e} < 1e-3", sad < 1e-3),
                ("period 2i", f"{p1:.2e} < 1e-6", p1 < 1e-6),
                ("period +-i", f"{p2:.2e} < 1e-6", p2 < 1e-6)])


def test_criterion_4_bessel():
    e0 = abs(bessel_k(0, 1.0) - bessel_cosh_quad(0, 1.0))
    e1 = abs(bessel_k(1, 1.0) - bessel_cosh_quad(1, 1.0))
    lit = max(abs(bessel_k(0, 1.0) - K0_1), abs(bessel_k(1, 1.0) - K1_1))
    checks = [("K0(1) vs quadrature", f"{e0:.1e} < 1e-8", e0 < 1e-8),
              ("K1(1) vs quadrature", f"{e1:.1e} < 1e-8", e1 < 1e-8),
              ("K0(1), K1(1) vs reference digits", f"{lit:.1e} < 1e-8", lit < 1e-8)]
    for x in (10.0, 12.5, 15.0, 20.0, 50.0, 200.0):
        r = bessel_k(0, x) * math.sqrt(2 * x / math.pi) * math.exp(x)
        ref = bessel_mp(0, x) * math.sqrt(2 * x / math.pi) * math.exp(x)
        checks.append((f"ratio at x={x:g}", f"{r:.5f} (mpmath {ref:.5f}) in [0.99, 1.01]", 0.99 <= r <= 1.01))
    _report(4, checks)


def test_criterion_5_x_coordinate():
    quad = standard_example(0.0)
    a1 = PoleField([1, -1, 2], [0.3 + 0.1j, -0.2, 0.05j], 0.1)
    a2 = PoleField([0.5j, -2], [0.1j, 0.2], 0.05)
    model = HiggsLocalModel(quad.q, a1, a2, ErrorModel(mu=1.0, delta=0.5, C=1.0), 10.0, 0.7 + 0.2j, 0.0)
    m0 = model.with_(error=ErrorModel())
    x0 = x_coordinate(m0, quad)
    lead = abs(np.expm1(x0.log_value - leading_exponent(x0.Z, x0.theta_E, m0.R, m0.zeta)))
    t0 = time.perf_counter()
    Rs = [5.0, 10.0, 15.0, 20.0]
    rq = [abs(x_coordinate(model.with_(R=R), quad).r_q) for R in Rs]
    dt = time.perf_counter() - t0
    slope = float(np.polyfit(Rs, np.log(rq), 1)[0])
    rel = abs(slope + 0.5) / 0.5
    real = check_reality(model, quad)
    zd = []
    for r in (1e-1, 1e-2, 1e-3):
        an, _ = dlog_x(model.with_(zeta=r * np.exp(0.2j)), quad)
        zd.append(abs(r * an))
    bounded = zd[2] <= zd[0] and max(zd) < 1.0
    _report(5, [("zero-error leading term", f"{lead:.2e} < 1e-6", lead < 1e-6),
                ("r_q slope", f"{slope:.4f} vs -0.5 ({100 * rel:.1f}% < 10%)", rel < 0.1),
                ("reality", f"{real:.2e} < 1e-6", real < 1e-6),
                ("|zeta d_eps log X|", " ".join(f"{v:.3g}" for v in zd) + " bounded", bounded),
                ("sweep runtime", f"{dt:.1f} s < 30 s", dt < 30)])


def test_criterion_6_tba():
    lat = tba.ChargeLattice([[0, 1], [-1, 0]])
    t0 = tba.tba_solve(tba.SpectrumData(lat, [1j, 1.0], [0.0, 0.0], [1, 1], {}), 1.0)
    sp = tba.one_ray_spectrum()
    t1 = tba.tba_solve(sp, 1.0)
    M = (0, 1)
    want = sum(tba_first_correction(sp.Z_of(b), sp.theta_of(b), 1.0, -1.0, pair=sp.lattice.pair(M, b))
               for b in sp.support)
    orc = abs(t1.correction(M, -1.0)[0] - want)
    jump = max(t1.jump_residual(g, r.direction * s) for r in t1.rays for s in (0.3, 0.7, 1.0, 1.6, 3.0)
               for g in ((1, 0), M, (1, 1)))
    sp2 = tba.two_ray_spectrum(Ze=0.3 + 1.0j, Zm=1.2 - 0.2j, theta=(0.4, -0.7))
    rng = np.random.default_rng(5)
    zs = rng.normal(size=10) + 1j * rng.normal(size=10)
    A = tba.measure_A(sp2, 1.0, M, zs)
    uniq = float(np.max(np.abs(A / A[0] - 1)))
    t2 = tba.tba_solve(sp, 2.0)
    meas, bound = abs(t2.correction(M, -1.0)[0]), tba.correction_bound(t2, M, -1.0)
    Rs = [1.0, 2.0, 3.0, 4.0]
    c = [abs(tba.tba_solve(sp, R).correction(M, -1.0)[0]) for R in Rs]
    slope = float(np.polyfit(Rs, np.log(c), 1)[0])
    rel = abs(slope + 2 * math.pi) / (2 * math.pi)
    _report(6, [("Omega=0 iterations", f"{t0.iterations} == 1", t0.iterations == 1 and t0.last_change == 0),
                ("first correction vs quadrature", f"{orc:.2e} < 1e-8", orc < 1e-8),
                ("jump residual", f"{jump:.2e} < 1e-6", jump < 1e-6),
                ("two initializations", f"{uniq:.2e} < 1e-8", uniq < 1e-8),
                ("Bessel-sum bound", f"{meas:.3e} <= {bound:.3e}", meas <= bound),
                ("slope", f"{slope:.4f} vs {-2 * math.pi:.4f} ({100 * rel:.1f}% < 5%)", rel < 0.05)])


def test_criterion_7_metric():
    J = np.array([[1.0], [1j]])
    x = np.array([0.6, 0.8, 0.3, -0.2])  # |Z_e| = 1

    def patch(omega):
        return met.ModuliPatch(lambda u: J[:, 0] * u[0], 1,
                               tba.one_ray_spectrum(0.6 + 0.8j, 1.0, (0.3, -0.2), omega=omega), 1.0, lambda u: J)

    m0 = met.extract_metric(patch(0), x)
    gsf, _ = met.semiflat_metric(patch(0), x)
    rel0 = float(np.linalg.norm(m0.g - gsf) / np.linalg.norm(gsf))
    m1 = met.extract_metric(patch(1), x)
    ev = float(np.linalg.eigvalsh(m1.g).min())
    t0 = time.perf_counter()
    d = met.decay_sweep(patch(1), x, [1.0, 1.5, 2.0, 2.5, 3.0])
    dt = time.perf_counter() - t0
    under = all(v <= d.C * e * (1 + 1e-12) for v, e in zip(d.diffs, d.envelope)) and not d.skipped
    I2 = max(m0.I_squared_residual, m1.I_squared_residual)
    _report(7, [("Omega=0 relative difference", f"{rel0:.2e} < 1e-5", rel0 < 1e-5),
                ("I^2 + 1", f"{I2:.2e} < 1e-6", I2 < 1e-6),
                ("asymmetry", f"{m1.asymmetry:.2e} < 1e-6", m1.asymmetry < 1e-6),
                ("min eigenvalue", f"{ev:.4f} > 0", ev > 0),
                ("decay slope", f"{d.slope:.4f} vs {d.target:.4f} ({100 * d.relative_error:.1f}% < 10%)",
                 d.relative_error is not None and d.relative_error < 0.1),
                ("envelope", f"C = {d.C:.3f}, all differences under C (K0 + K1)", under),
                ("runtime", f"{dt:.1f} s < 300 s", dt < 300)])


def test_criterion_8_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp, "a"), Path(tmp, "b")
        codes = [main(["selftest", "--out", str(p), "--seed", "7"]) for p in (a, b)]
        names = sorted(p.name for p in a.iterdir())
        same = names == sorted(p.name for p in b.iterdir()) and all(
            (a / n).read_bytes() == (b / n).read_bytes() for n in names)
    _report(8, [("exit codes", f"{codes}", codes == [0, 0]),
                ("byte-identical artifacts", ", ".join(names), same and bool(names))])


if __name__ == "__main__":
    import sys
    failed = 0
    for name, fn in sorted((k, v) for k, v in dict(globals()).items() if k.startswith("test_criterion")):
        try:
            fn()
        except AssertionError:
            failed += 1
        print(LINES[-1])
    sys.exit(1 if failed else 0)
