"""Command-line driver, JSON configuration, and CSV/JSON/SVG export.

Exit codes: 0 success, 2 configuration or validation failure, 3 numerical
failure (non-contraction, divergence), 64 unknown command.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import lattice_tba as tba
from . import metric as met
from . import quaddiff as qd
from . import sections as sec
from . import volterra as vt
from .numerics import ContourPath, NumericalError, Quadrature, bessel_k

log = logging.getLogger("twistor_tba")

COMMANDS = ("trace", "separatrices", "saddles", "periods", "volterra", "sections", "xcoord",
            "tba", "metric", "decay-sweep", "selftest")
EX_OK, EX_CONFIG, EX_NUMERIC, EX_USAGE = 0, 2, 3, 64


class ConfigError(ValueError):
    """Schema violation; ``path`` locates the offending entry (e.g. quaddiff.zeros[1])."""

    def __init__(self, path, msg):
        super().__init__(f"{path}: {msg}")
        self.path = path


# ---------------------------------------------------------------- config access

def _need(d, key, path):
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    if key not in d:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required entry")
    return d[key]


def _complex(v, path):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        return complex(v[0], v[1])
    raise ConfigError(path, "expected a number or [re, im]")


def _float(d, key, path, default=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"{path}.{key}", "missing required entry")
        return float(default)
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", "expected a real number")
    return float(v)


def _floats(d, key, path, default=None):
    v = d.get(key, default)
    if v is None:
        raise ConfigError(f"{path}.{key}", "missing required entry")
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{path}.{key}", "expected a non-empty list of numbers")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{path}.{key}[{i}]", "expected a real number")
        out.append(float(x))
    return out


def _block(cfg, key, required=True):
    v = cfg.get(key)
    if v is None:
        if required:
            raise ConfigError(key, "missing required block")
        return {}
    if not isinstance(v, dict):
        raise ConfigError(key, "expected an object")
    return v


def _check_points(lst, path):
    if not isinstance(lst, list):
        raise ConfigError(path, "expected a list")
    for i, v in enumerate(lst):
        if isinstance(v, list) and len(v) == 2 and isinstance(v[0], list):
            _complex(v[0], f"{path}[{i}][0]")
            _complex(v[1], f"{path}[{i}][1]")
        else:
            _complex(v, f"{path}[{i}]")


def parse_quaddiff(d, path="quaddiff"):
    _check_points(d.get("zeros", []), f"{path}.zeros")
    _check_points(d.get("poles", []), f"{path}.poles")
    if "norm" in d:
        _complex(d["norm"], f"{path}.norm")
    try:
        return qd.QuadraticDifferential.from_dict(d)
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


def parse_spectrum(d, path="spectrum"):
    gens = _need(d, "generators", path)
    if not isinstance(gens, list) or not gens:
        raise ConfigError(f"{path}.generators", "expected a non-empty list")
    for i, g in enumerate(gens):
        _complex(_need(g, "Z", f"{path}.generators[{i}]"), f"{path}.generators[{i}].Z")
    _need(d, "pairing", path)
    try:
        return tba.SpectrumData.from_dict(d)
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(path, str(e)) from None


def parse_patch(d, spectrum, path="patch"):
    """Affine patch: {"r": 1, "Z0": [...], "dZ": [[...]], "R": 1, "point": [...]}."""
    _need(d, "Z0", path)
    _need(d, "dZ", path)
    try:
        patch = met.ModuliPatch.from_dict(d, spectrum)
    except (ValueError, TypeError) as e:
        raise ConfigError(path, str(e)) from None
    pt = d.get("point", [0.0] * patch.dim)
    x = _floats({"point": pt}, "point", path)
    if len(x) != patch.dim:
        raise ConfigError(f"{path}.point", f"expected {patch.dim} real coordinates")
    return patch, np.array(x)


def parse_model(cfg, seed):
    """(HiggsLocalModel, QuadrilateralModel) from the model block; "standard": true
    selects the built-in quadrilateral with its q."""
    m = _block(cfg, "model")
    theta = _float(m, "theta", "model", 0.0)
    if m.get("standard", "quadrilateral" not in m):
        quad = sec.standard_example(theta)
        q = quad.q
    else:
        q = parse_quaddiff(_need(m, "q", "model"), "model.q")
        qm = _need(m, "quadrilateral", "model")
        try:
            quad = sec.QuadrilateralModel.from_dict(q, {**qm, "theta": theta})
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError("model.quadrilateral", str(e)) from None
    err = dict(m.get("error", {}))
    if seed is not None:
        err["seed"] = int(seed)
    try:
        model = sec.HiggsLocalModel(q, sec.PoleField.from_dict(m.get("a1")),
                                    sec.PoleField.from_dict(m.get("a2")), sec.ErrorModel(**err),
                                    _float(m, "R", "model", 10.0),
                                    _complex(m.get("zeta", [0.7, 0.2]), "model.zeta"), theta,
                                    _float(m, "eps", "model", 0.0))
    except (TypeError, ValueError) as e:
        raise ConfigError("model", str(e)) from None
    return model, quad


def _quad(cfg):
    try:
        return Quadrature.from_dict(cfg.get("tolerances"))
    except (ValueError, TypeError) as e:
        raise ConfigError("tolerances", str(e)) from None


# ---------------------------------------------------------------- writers

def fmt(x) -> str:
    """17 significant digits (round-trip exact for doubles)."""
    return "%.17g" % float(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(v if isinstance(v, str) else fmt(v) for v in r) + "\n")


def jsonable(v):
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return jsonable(v.tolist())
    if isinstance(v, (complex, np.complexfloating)):
        return [float(v.real), float(v.imag)]
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_json(path, obj):
    with open(path, "w", newline="\n") as f:
        json.dump(jsonable(obj), f, indent=2, sort_keys=True)
        f.write("\n")


def export_svg(trajectories=(), zeros=(), poles=(), rays=(), size: int = 400, margin: float = 0.08,
               stroke: str = "#1f4e79", closed=None) -> str:
    """Deterministic SVG: polylines for trajectories, crosses at zeros, circles at
    poles, labelled rays from the origin (ray = (direction, label))."""
    trajectories = [np.asarray(t, dtype=complex) for t in trajectories]
    closed = list(closed) if closed is not None else [False] * len(trajectories)
    pts = [np.asarray(zeros, dtype=complex).ravel(), np.asarray(poles, dtype=complex).ravel()]
    pts += [t for t in trajectories]
    if rays:
        pts.append(np.array([0j]))
    allp = np.concatenate(pts) if pts else np.zeros(0, dtype=complex)
    allp = allp[np.isfinite(allp)]
    if len(allp):
        lo_x, hi_x = float(allp.real.min()), float(allp.real.max())
        lo_y, hi_y = float(allp.imag.min()), float(allp.imag.max())
    else:
        lo_x = lo_y = -1.0
        hi_x = hi_y = 1.0
    span = max(hi_x - lo_x, hi_y - lo_y, 1e-12)
    if rays:
        span = max(span, 2.0)
        lo_x, hi_x = min(lo_x, -1.0), max(hi_x, 1.0)
        lo_y, hi_y = min(lo_y, -1.0), max(hi_y, 1.0)
        span = max(hi_x - lo_x, hi_y - lo_y)
    cx, cy = 0.5 * (lo_x + hi_x), 0.5 * (lo_y + hi_y)
    s = size * (1 - 2 * margin) / span

    def xy(z):
        return size / 2 + s * (z.real - cx), size / 2 - s * (z.imag - cy)

    def p(v):
        return "%.3f" % v

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>']
    for tr, cl in zip(trajectories, closed):
        tr = tr[np.isfinite(tr)]
        if cl and len(tr) and tr[-1] != tr[0]:
            tr = np.append(tr, tr[0])
        coords = " ".join(f"{p(a)},{p(b)}" for a, b in (xy(z) for z in tr))
        out.append(f'<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="1"/>')
    for z in np.asarray(zeros, dtype=complex).ravel():
        a, b = xy(z)
        out.append(f'<path d="M{p(a - 4)},{p(b - 4)} L{p(a + 4)},{p(b + 4)} M{p(a - 4)},{p(b + 4)} '
                   f'L{p(a + 4)},{p(b - 4)}" stroke="#b22222" stroke-width="1.5" class="zero"/>')
    for z in np.asarray(poles, dtype=complex).ravel():
        a, b = xy(z)
        out.append(f'<circle cx="{p(a)}" cy="{p(b)}" r="4" fill="none" stroke="#228b22" '
                   f'stroke-width="1.5" class="pole"/>')
    for d, label in rays:
        d = complex(d) / abs(complex(d))
        a0, b0 = xy(0j)
        a1, b1 = xy(d * span)
        out.append(f'<line x1="{p(a0)}" y1="{p(b0)}" x2="{p(a1)}" y2="{p(b1)}" stroke="#6a3d9a" '
                   f'stroke-width="1" class="ray"/>')
        a2, b2 = xy(0.8 * d * span / 2)
        out.append(f'<text x="{p(a2)}" y="{p(b2)}" font-size="10" fill="#6a3d9a">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- commands

def _stop(block, path):
    keys = ("max_length", "pole_capture", "zero_capture", "escape_radius", "closure", "sample_dt")
    d = {k: block[k] for k in keys if k in block}
    try:
        return qd.StopRules(**d)
    except TypeError as e:
        raise ConfigError(path, str(e)) from None


def _pmap(fn, items, threads):
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads or None) as ex:
        return list(ex.map(fn, items))


def cmd_trace(cfg, out, ctx):
    q = parse_quaddiff(_block(cfg, "quaddiff"))
    b = _block(cfg, "trace")
    z0 = _complex(_need(b, "z0", "trace"), "trace.z0")
    th = _float(b, "theta", "trace", 0.0)
    direction = int(b.get("direction", 1))
    if direction not in (1, -1):
        raise ConfigError("trace.direction", "expected +1 or -1")
    branch = _complex(b["branch"], "trace.branch") if "branch" in b else None
    tr = qd.trace_trajectory(q, z0, th, direction, _stop(b, "trace"), branch)
    write_csv(os.path.join(out, "trace.csv"), ["t", "Re z", "Im z"],
              zip(tr.t, tr.z.real, tr.z.imag))
    with open(os.path.join(out, "trace.svg"), "w") as f:
        f.write(export_svg([tr.z], q.zeros, q.pole_locs, closed=[tr.closed]))
    summary = {"samples": len(tr.t), "length": float(tr.t[-1]), "closed": tr.closed,
               "ends": [list(e) for e in tr.ends], "residual": tr.residual()}
    write_json(os.path.join(out, "trace.json"), summary)
    return f"trace: {len(tr.t)} samples, end {tr.ends[1][0]}, residual {tr.residual():.3g}"


def cmd_separatrices(cfg, out, ctx):
    q = parse_quaddiff(_block(cfg, "quaddiff"))
    b = _block(cfg, "separatrices", False)
    th = _float(b, "theta", "separatrices", 0.0)
    ks = b.get("zeros", list(range(len(q.zeros))))
    rows, curves, summary = [], [], []
    for k in ks:
        if not isinstance(k, int) or not 0 <= k < len(q.zeros):
            raise ConfigError("separatrices.zeros", f"no zero with index {k!r}")
        s = qd.separatrices(q, k, th, _stop(b, "separatrices"))
        for n, tr in enumerate(s.trajectories):
            z = np.concatenate([[q.zeros[k]], tr.z])
            curves.append(z)
            rows += [(str(k), str(n), t, v.real, v.imag) for t, v in zip(np.concatenate([[0.0], tr.t]), z)]
        summary.append({"zero": k, "angles": s.angles, "collision": s.collision,
                        "ends": [list(tr.ends[1]) for tr in s.trajectories]})
    write_csv(os.path.join(out, "separatrices.csv"), ["zero", "branch", "t", "Re z", "Im z"], rows)
    with open(os.path.join(out, "separatrices.svg"), "w") as f:
        f.write(export_svg(curves, q.zeros, q.pole_locs))
    write_json(os.path.join(out, "separatrices.json"), summary)
    return f"separatrices: {len(curves)} trajectories from {len(ks)} zeros"


def cmd_saddles(cfg, out, ctx):
    q = parse_quaddiff(_block(cfg, "quaddiff"))
    b = _block(cfg, "saddles", False)
    lo = _float(b, "theta_min", "saddles", 0.0)
    hi = _float(b, "theta_max", "saddles", math.pi)
    n = int(b.get("n", 64))
    if n < 2 or not hi > lo:
        raise ConfigError("saddles", "need n >= 2 and theta_max > theta_min")
    grid = np.linspace(lo, hi, n, endpoint=False)
    ev = qd.find_saddles(q, grid, float(b.get("tol", 1e-6)), _stop(b, "saddles") if b else None)
    write_json(os.path.join(out, "saddles.json"), {"events": [e.to_dict() for e in ev]})
    desc = ", ".join(f"{e.theta_c:.6f}" for e in ev)
    return f"saddles: {len(ev)} events" + (f" at theta_c = {desc}" if ev else "")


def cmd_periods(cfg, out, ctx):
    q = parse_quaddiff(_block(cfg, "quaddiff"))
    b = _block(cfg, "periods")
    cyc = _need(b, "cycles", "periods")
    quad = _quad(cfg)
    res = []
    for i, c in enumerate(cyc):
        path = f"periods.cycles[{i}]"
        if "center" in c:
            cp = ContourPath.circle(_complex(c["center"], path + ".center"), _float(c, "radius", path),
                                    int(c.get("orientation", 1)))
        else:
            nodes = _need(c, "nodes", path)
            cp = ContourPath.polyline([_complex(z, f"{path}.nodes[{j}]") for j, z in enumerate(nodes)])
        seed = _complex(c["branch"], path + ".branch") if "branch" in c else None
        res.append(qd.period(q, cp, seed, quad))
    write_csv(os.path.join(out, "periods.csv"), ["cycle", "Re Z", "Im Z"],
              [(str(i), z.real, z.imag) for i, z in enumerate(res)])
    write_json(os.path.join(out, "periods.json"), {"periods": res})
    return "periods: " + ", ".join(f"{z.real:.10g}{z.imag:+.10g}i" for z in res)


def cmd_volterra(cfg, out, ctx):
    """Exponential kernel family K(t, s) = c e^{-s}, a constant, initial value at infinity."""
    b = _block(cfg, "volterra", False)
    c = _float(b, "c", "volterra", 0.5)
    a0 = _float(b, "a", "volterra", 1.0)
    T = _float(b, "T", "volterra", 0.0)
    prob = vt.IvpAtInfinity(T, lambda t: np.full(np.shape(t) + (1,), a0, dtype=complex),
                            lambda t, s: np.ones(np.broadcast(t, s).shape + (1, 1)),
                            lambda s: c * np.exp(-np.asarray(s))[..., None, None], 1,
                            np.array([a0]), 1.0)
    lam, bound = vt.picard_bound(prob)
    sol = vt.solve_ivp_infinity(prob, quad=_quad(cfg))
    x = sol.values[:, 0]
    write_csv(os.path.join(out, "volterra.csv"), ["t", "Re x", "Im x"], zip(sol.grid, x.real, x.imag))
    write_json(os.path.join(out, "volterra.json"),
               {"lambda": lam, "bound": bound, "sup_norm": sol.sup_norm(), "err": sol.err,
                "iterations": sol.iterations, "x_T": x[0]})
    return f"volterra: lambda {lam:.6g}, sup |x| {sol.sup_norm():.6g} <= {bound:.6g}, {sol.iterations} iterations"


def cmd_sections(cfg, out, ctx):
    model, quad = parse_model(cfg, ctx["seed"])
    rows = []
    for k in range(4):
        for v in sec._SIDE_VERTS[k]:
            s = sec.small_flat_section(model, quad.sides[k], quad.sigma(k, v))
            vec = np.asarray(s.vector(0.0)).reshape(-1)
            rows.append((str(k + 1), str(v + 1), vec[0].real, vec[0].imag, vec[1].real, vec[1].imag,
                         s.remainder_sup()))
    write_csv(os.path.join(out, "sections.csv"),
              ["side", "vertex", "Re s1", "Im s1", "Re s2", "Im s2", "remainder"], rows)
    write_json(os.path.join(out, "sections.json"), {"model": model.to_dict(), "quadrilateral": quad.to_dict()})
    return f"sections: {len(rows)} small flat sections, max remainder {max(r[-1] for r in rows):.3g}"


def cmd_xcoord(cfg, out, ctx):
    model, quad = parse_model(cfg, ctx["seed"])
    qt = _quad(cfg)
    x = sec.x_coordinate(model, quad, quad=qt)
    summary = {"x": x.to_dict(), "reality_residual": sec.check_reality(model, quad, quad=qt)}
    sw = _block(cfg, "sweep", False)
    msg = f"xcoord: |r_q| {abs(x.r_q):.3g}, bound {x.bound:.3g}"
    if "R" in sw:
        Rs = _floats(sw, "R", "sweep")
        xs = _pmap(lambda R: sec.x_coordinate(model.with_(R=R), quad, quad=qt), Rs, ctx["threads"])
        vals = [abs(v.r_q) for v in xs]
        slope = float(np.polyfit(Rs, np.log(vals), 1)[0]) if len(Rs) > 1 and min(vals) > 0 else None
        write_csv(os.path.join(out, "xcoord.csv"), ["R", "abs r_q", "bound"],
                  [(R, v, xx.bound) for R, v, xx in zip(Rs, vals, xs)])
        summary["sweep"] = {"R": Rs, "abs_r_q": vals, "slope": slope, "target": -model.error.delta}
        if slope is not None:
            msg += f"; sweep slope {slope:.4f} (target {-model.error.delta:.4f})"
    write_json(os.path.join(out, "xcoord.json"), summary)
    return msg


def _tba_grid(b, path):
    return tba.RayGrid(_float(b, "h", path, 0.05), _float(b, "eps_tail", path, 1e-16))


def cmd_tba(cfg, out, ctx):
    sp = parse_spectrum(_block(cfg, "spectrum"))
    b = _block(cfg, "tba", False)
    R = _float(b, "R", "tba", 1.0)
    table = tba.tba_solve(sp, R, _tba_grid(b, "tba"), int(b.get("max_iter", 200)),
                          _float(b, "tol", "tba", 1e-13))
    rows = []
    for i, ray in enumerate(table.rays):
        for y, L in zip(ray.y, ray.L):
            rows.append((str(i), y, L.real, L.imag))
    write_csv(os.path.join(out, "tba.csv"), ["ray", "y", "Re log", "Im log"], rows)
    zs = [_complex(z, f"tba.zeta[{i}]") for i, z in enumerate(b.get("zeta", [-1.0]))]
    gens = [tuple(int(i == j) for j in range(sp.lattice.rank)) for i in range(sp.lattice.rank)]
    corr = max((float(np.max(np.abs(table.correction(g, zs)))) for g in gens), default=0.0)
    write_json(os.path.join(out, "tba.json"),
               {"iterations": table.iterations, "history": table.history, "correction_norm": corr,
                "rays": [{"charge": list(r.charge), "Omega": r.omega, "phase": r.phase} for r in table.rays]})
    with open(os.path.join(out, "tba.svg"), "w") as f:
        f.write(export_svg(rays=[(r.direction, str(tuple(r.charge))) for r in table.rays]))
    it = table.iterations
    return f"tba: converged in {it} iteration{'s' if it != 1 else ''}, correction norm {corr:.3g}"


def cmd_metric(cfg, out, ctx):
    sp = parse_spectrum(_block(cfg, "spectrum"))
    patch, x = parse_patch(_block(cfg, "patch"), sp)
    b = _block(cfg, "metric", False)
    m = met.extract_metric(patch, x, _float(b, "h", "metric", 1e-4), _tba_grid(b, "metric"))
    gsf, _ = met.semiflat_metric(patch, x)
    ev = np.linalg.eigvalsh(m.g)
    rel = float(np.linalg.norm(m.g - gsf) / np.linalg.norm(gsf))
    write_csv(os.path.join(out, "metric.csv"), patch.labels, m.g)
    write_json(os.path.join(out, "metric.json"),
               {"g": m.g, "g_semiflat": gsf, "eigenvalues": ev, "I": m.I,
                "I_squared_residual": m.I_squared_residual, "asymmetry": m.asymmetry,
                "omega_I_cross_check": m.omega_I_cross, "decomposition_residual": m.decomposition_residual,
                "relative_difference_to_semiflat": rel, "lagrangian_residual": patch.lagrangian_residual(patch.split(x)[0])})
    return f"metric: min eigenvalue {ev.min():.6g}, |I^2 + 1| {m.I_squared_residual:.3g}, |g - g_sf|/|g_sf| {rel:.3g}"


def cmd_decay_sweep(cfg, out, ctx):
    sp = parse_spectrum(_block(cfg, "spectrum"))
    patch, x = parse_patch(_block(cfg, "patch"), sp)
    sw = _block(cfg, "sweep", False)
    Rs = _floats(sw, "R", "sweep", [1.0, 1.5, 2.0, 2.5, 3.0])
    d = met.decay_sweep(patch, x, Rs, _float(sw, "h", "sweep", 1e-4), _tba_grid(sw, "sweep"))
    write_csv(os.path.join(out, "decay-sweep.csv"), ["R", "diff norm", "bound"],
              [(R, v, d.C * e) for R, v, e in zip(d.Rs, d.diffs, d.envelope)])
    write_json(os.path.join(out, "decay-sweep.json"),
               {"slope": d.slope, "target_rate": d.target, "relative_error": d.relative_error,
                "C": d.C, "spread": d.spread, "skipped": d.skipped, "flag": d.flag})
    if d.slope is None:
        return f"decay-sweep: {d.flag}"
    return f"decay-sweep: slope {d.slope:.4f}, target {d.target:.4f}, relative error {d.relative_error:.3g}"


# ---------------------------------------------------------------- selftest

def _selftest_checks(seed):
    """(name, measured, threshold) for a fast invariant suite; pass means measured < threshold."""
    checks = []
    # Volterra closed form and Picard bound
    prob = vt.IvpAtInfinity(0.0, lambda t: np.ones(np.shape(t) + (1,), dtype=complex),
                            lambda t, s: np.ones(np.broadcast(t, s).shape + (1, 1)),
                            lambda s: 0.5 * np.exp(-np.asarray(s))[..., None, None], 1,
                            np.array([1.0]), 1.0)
    sol = vt.solve_ivp_infinity(prob)
    t = sol.grid[sol.grid <= 10]
    exact = np.exp(-0.5 * np.exp(-t))
    checks.append(("volterra closed form", float(np.max(np.abs(sol.values[:len(t), 0] - exact))), 1e-8))
    lam, bound = vt.picard_bound(prob)
    checks.append(("volterra picard bound excess", max(0.0, sol.sup_norm() - bound), 1e-12))
    # Bessel
    checks.append(("bessel K0(1)", abs(bessel_k(0, 1.0) - 0.42102443824070834), 1e-8))
    checks.append(("bessel K1(1)", abs(bessel_k(1, 1.0) - 0.60190723019723457), 1e-8))
    # periods and trajectories
    q = qd.QuadraticDifferential([], [(0.0, 1.0)])
    Z = qd.period(q, ContourPath.circle(0, 1))
    checks.append(("period double pole", abs(abs(Z) - 2.0), 1e-6))
    q2 = qd.QuadraticDifferential([1, -1], norm=1)
    Z2 = qd.period(q2, ContourPath.circle(0, 2))
    checks.append(("period branch cut", abs(abs(Z2) - 1.0), 1e-6))
    tr = qd.trace_trajectory(q2, 0.3 + 0.4j, 0.7, 1, qd.StopRules(max_length=2.0))
    checks.append(("trajectory parametrization residual", tr.residual(), 1e-6))
    # TBA
    sp0 = tba.one_ray_spectrum(omega=0)
    t0 = tba.tba_solve(sp0, 1.0)
    checks.append(("tba omega=0 iterations - 1", float(t0.iterations - 1), 0.5))
    sp = tba.one_ray_spectrum(1j, 1.0, (0.3, -0.2))
    t1 = tba.tba_solve(sp, 1.0)
    checks.append(("tba jump residual", float(t1.jump_residual((0, 1), -1j)), 1e-6))
    checks.append(("tba reality residual", float(np.max(t1.reality_residual((0, 1), 0.4 + 0.9j))), 1e-10))
    # metric with Omega = 0
    A = np.array([[1.0], [1j]])
    patch = met.ModuliPatch(lambda u: A[:, 0] * u[0], 1, tba.one_ray_spectrum(omega=0), 1.0, lambda u: A)
    x = np.array([0.6, 0.8, 0.3, -0.2])
    m = met.extract_metric(patch, x)
    gsf, _ = met.semiflat_metric(patch, x)
    checks.append(("metric omega=0 relative difference", float(np.linalg.norm(m.g - gsf) / np.linalg.norm(gsf)), 1e-5))
    checks.append(("metric I^2 + 1", m.I_squared_residual, 1e-6))
    checks.append(("metric negative eigenvalues", float(max(0.0, -np.linalg.eigvalsh(m.g).min())), 1e-300))
    # X-coordinate of the standard quadrilateral with zero error and a seeded error model
    quad = sec.standard_example(0.0)
    a1 = sec.PoleField([1, -1, 2], [0.3 + 0.1j, -0.2, 0.05j], 0.1)
    a2 = sec.PoleField([0.5j, -2], [0.1j, 0.2], 0.05)
    model = sec.HiggsLocalModel(quad.q, a1, a2, sec.ErrorModel(seed=seed), 10.0, 0.7 + 0.2j, 0.0)
    checks.append(("xcoord zero-error relative error", abs(sec.x_coordinate(model, quad).r_q), 1e-6))
    model1 = model.with_(error=sec.ErrorModel(C=1.0, seed=seed))
    checks.append(("xcoord reality residual", sec.check_reality(model1, quad), 1e-6))
    return checks


def cmd_selftest(cfg, out, ctx):
    seed = 0 if ctx["seed"] is None else int(ctx["seed"])
    checks = _selftest_checks(seed)
    rows = [(name, val, thr, "pass" if val < thr else "FAIL") for name, val, thr in checks]
    write_csv(os.path.join(out, "selftest.csv"), ["check", "value", "threshold", "status"], rows)
    write_json(os.path.join(out, "selftest.json"),
               {"seed": seed, "checks": [{"name": r[0], "value": r[1], "threshold": r[2], "pass": r[3] == "pass"}
                                         for r in rows]})
    for r in rows:
        log.info("%s: %s (%.3g < %.3g)", r[0], r[3], r[1], r[2])
    failed = [r[0] for r in rows if r[3] != "pass"]
    if failed:
        raise NumericalError("selftest failures: " + ", ".join(failed))
    return f"selftest: {len(rows)} checks passed"


HANDLERS = {"trace": cmd_trace, "separatrices": cmd_separatrices, "saddles": cmd_saddles,
            "periods": cmd_periods, "volterra": cmd_volterra, "sections": cmd_sections,
            "xcoord": cmd_xcoord, "tba": cmd_tba, "metric": cmd_metric,
            "decay-sweep": cmd_decay_sweep, "selftest": cmd_selftest}


def build_parser():
    p = argparse.ArgumentParser(prog="twistor-tba", description="Twistor coordinates and TBA metric numerics.")
    p.add_argument("command", help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--out", help="output directory (default: config 'out' or ./out)")
    p.add_argument("--seed", type=int, help="random seed for synthetic error profiles")
    p.add_argument("--threads", type=int, default=1, help="worker threads for sweeps (0 = auto)")
    p.add_argument("--verbose", action="store_true")
    return p


def run(command, config=None, out=None, seed=None, threads=1, verbose=False) -> int:
    """Run one command; returns the exit code."""
    if command not in HANDLERS:
        print(build_parser().format_usage().rstrip(), file=sys.stderr)
        print(f"unknown command {command!r}; expected one of: {', '.join(COMMANDS)}", file=sys.stderr)
        return EX_USAGE
    try:
        if isinstance(config, dict):
            cfg = config
        elif config:
            with open(config) as f:
                cfg = json.load(f)
        else:
            cfg = {}
        if not isinstance(cfg, dict):
            raise ConfigError("<root>", "expected a JSON object")
        if "command" in cfg and cfg["command"] != command:
            raise ConfigError("command", f"config is for {cfg['command']!r}, not {command!r}")
        if seed is None and "seed" in cfg:
            if not isinstance(cfg["seed"], int):
                raise ConfigError("seed", "expected an integer")
            seed = cfg["seed"]
        if threads is None or threads < 0:
            raise ConfigError("--threads", "expected a non-negative integer")
        out = out or cfg.get("out", "out")
        try:
            os.makedirs(out, exist_ok=True)
        except OSError as e:
            raise ConfigError("out", f"cannot create output directory: {e}") from None
        if not os.access(out, os.W_OK):
            raise ConfigError("out", "output directory is not writable")
        msg = HANDLERS[command](cfg, out, {"seed": seed, "threads": threads, "verbose": verbose})
        print(msg)
        return EX_OK
    except (ConfigError, json.JSONDecodeError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EX_CONFIG
    except (NumericalError, tba.RayGuardError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EX_NUMERIC
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EX_CONFIG


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return run(args.command, args.config, args.out, args.seed, args.threads, args.verbose)
