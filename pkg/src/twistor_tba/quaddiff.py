"""Rational quadratic differentials: trajectories, separatrices, periods, saddle scans."""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .numerics import (DEFAULT_QUAD, ContourPath, NumericalError, ProximityError,
                       Quadrature, integrate_contour)


class QuadraticDifferential:
    """q(z) dz^2 = c * prod(z - z_i) / prod(z - p_j)^2 dz^2.

    ``poles`` holds locations or ``(location, sigma)`` pairs, sigma being the
    coefficient in the local form -sigma^2 dz^2/(z - p)^2. If ``norm`` is None
    it is fixed from the sigma of the first pole; otherwise every supplied
    sigma is checked against the rational function.
    """

    def __init__(self, zeros=(), poles=(), norm=None, rtol=1e-9):
        self.zeros = np.array([complex(z) for z in zeros], dtype=complex)
        locs, sig = [], []
        for p in poles:
            if isinstance(p, (tuple, list)):
                locs.append(complex(p[0]))
                sig.append(complex(p[1]))
            else:
                locs.append(complex(p))
                sig.append(None)
        self.pole_locs = np.array(locs, dtype=complex)
        crit = np.concatenate([self.zeros, self.pole_locs])
        for i in range(len(crit)):
            for j in range(i):
                if abs(crit[i] - crit[j]) == 0:
                    raise ValueError("zeros and poles must be pairwise distinct")
        if norm is None:
            if sig and sig[0] is not None:
                norm = -sig[0] ** 2 / self._shape_at_pole(0)
            else:
                norm = 1.0
        self.norm = complex(norm)
        if self.norm == 0:
            raise ValueError("normalization must be nonzero")
        self.sigmas = []
        for j, s in enumerate(sig):
            lead = self.norm * self._shape_at_pole(j)
            if s is None:
                s = np.sqrt(-lead)
            elif s == 0:
                raise ValueError("pole coefficient sigma must be nonzero")
            elif abs(-s * s - lead) > rtol * abs(lead):
                raise ValueError(f"pole {j}: sigma^2 inconsistent with zeros/norm")
            self.sigmas.append(complex(s))

    def _shape_at_pole(self, j):
        p = self.pole_locs[j]
        num = np.prod(p - self.zeros) if len(self.zeros) else 1.0
        others = np.delete(self.pole_locs, j)
        den = np.prod((p - others) ** 2) if len(others) else 1.0
        return complex(num / den)

    @property
    def critical_points(self):
        return np.concatenate([self.zeros, self.pole_locs])

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        num = np.ones_like(z)
        for a in self.zeros:
            num = num * (z - a)
        den = np.ones_like(z)
        for p in self.pole_locs:
            den = den * (z - p) ** 2
        return self.norm * num / den

    def log_derivative(self, z):
        """q'(z)/q(z)."""
        z = np.asarray(z, dtype=complex)
        out = np.zeros_like(z)
        for a in self.zeros:
            out = out + 1.0 / (z - a)
        for p in self.pole_locs:
            out = out - 2.0 / (z - p)
        return out

    @property
    def order_at_infinity(self):
        """Pole order of q dz^2 at infinity (negative means a zero)."""
        return 4 + len(self.zeros) - 2 * len(self.pole_locs)

    def scale(self):
        """Minimum pairwise critical distance (1 when fewer than two critical points)."""
        c = self.critical_points
        if len(c) < 2:
            return 1.0
        d = np.abs(c[:, None] - c[None, :])
        return float(d[~np.eye(len(c), dtype=bool)].min())

    def to_dict(self):
        return {"zeros": [[z.real, z.imag] for z in self.zeros],
                "poles": [[[p.real, p.imag], [s.real, s.imag]]
                          for p, s in zip(self.pole_locs, self.sigmas)],
                "norm": [self.norm.real, self.norm.imag]}

    @classmethod
    def from_dict(cls, d):
        def c(v):
            return complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v)
        poles = []
        for p in d.get("poles", []):
            if isinstance(p, (list, tuple)) and len(p) == 2 and isinstance(p[0], (list, tuple)):
                poles.append((c(p[0]), c(p[1])))
            else:
                poles.append(c(p))
        norm = d.get("norm")
        return cls([c(z) for z in d.get("zeros", [])], poles,
                   None if norm is None else c(norm))


def _nearest_zero(q, z):
    if not len(q.zeros):
        return None, math.inf
    d = np.abs(q.zeros - z)
    k = int(np.argmin(d))
    return k, float(d[k])


def sqrt_tracked(q: QuadraticDifferential, path: Sequence[complex], initial_branch: complex,
                 exclusion: float | None = None, tol: float = 1e-8):
    """Continuous branch of q^{1/2} at the points of ``path``.

    Intermediate points are inserted wherever the branch would change by more
    than half its modulus between neighbours.
    """
    path = np.asarray(path, dtype=complex)
    if exclusion is None:
        exclusion = 1e-3 * q.scale()
    for z in path:
        k, d = _nearest_zero(q, z)
        if k is not None and d < exclusion:
            raise ProximityError(f"path within {exclusion:g} of zero {k} at {q.zeros[k]}",
                                 q.zeros[k], k)
    b = complex(initial_branch)
    q0 = complex(q(path[0]))
    if abs(b * b - q0) > max(tol, 1e-6 * abs(q0)) * 10:
        raise ValueError("initial branch does not square to q at the first point")
    raw = np.sqrt(q(path).astype(complex))
    out = np.empty(len(path), dtype=complex)
    out[0] = b
    prev = b
    for k in range(1, len(path)):
        sb = raw[k]
        if abs(sb - prev) > abs(sb + prev):
            sb = -sb
        if abs(sb - prev) > 0.5 * min(abs(sb), abs(prev)):
            sb = _continue(q, path[k - 1], path[k], prev)
        out[k] = prev = sb
    return out


def _continue(q, za, zb, sa, depth=0):
    sb = np.sqrt(complex(q(zb)))
    if abs(sb - sa) > abs(sb + sa):
        sb = -sb
    if abs(sb - sa) <= 0.5 * min(abs(sa), abs(sb)) or depth > 40:
        return sb
    zm = 0.5 * (za + zb)
    sm = _continue(q, za, zm, sa, depth + 1)
    return _continue(q, zm, zb, sm, depth + 1)


@lru_cache(maxsize=8)
def _gauss(n):
    return np.polynomial.legendre.leggauss(n)


def _match(q, z, ref):
    s = np.sqrt(complex(q(z)))
    return s if abs(s - ref) <= abs(s + ref) else -s


@dataclass
class StopRules:
    max_length: float = 30.0
    pole_capture: float | None = None
    zero_capture: float | None = None
    escape_radius: float = 10.0  # in units of 1 + max |critical point|
    closure: bool = True
    sample_dt: float = 0.02


@dataclass
class Trajectory:
    t: np.ndarray
    z: np.ndarray
    root: np.ndarray  # tracked q^{1/2} at the samples
    theta: float
    direction: int
    ends: tuple = (("open", None), ("open", None))
    closed: bool = False

    def reversed(self):
        return Trajectory(self.t[-1] - self.t[::-1], self.z[::-1], self.root[::-1], self.theta,
                          -self.direction, (self.ends[1], self.ends[0]), self.closed)

    def residual(self):
        """sup |q^{1/2}(z) z' - direction e^{i theta}| over interior samples."""
        zd = self.direction * np.exp(1j * self.theta) / self.root
        return float(np.max(np.abs(self.root * zd - self.direction * np.exp(1j * self.theta))))

    def velocity(self):
        return self.direction * np.exp(1j * self.theta) / self.root


def _capture_radii(q, stop):
    s = q.scale()
    rp = stop.pole_capture if stop.pole_capture is not None else 1e-3 * s
    rz = stop.zero_capture if stop.zero_capture is not None else 1e-3 * s
    return rp, rz


def trace_trajectory(q: QuadraticDifferential, z0: complex, theta: float, direction: int = 1,
                     stop: StopRules | None = None, branch: complex | None = None,
                     rtol: float = 1e-12):
    """Trace z' = direction * e^{i theta} / q^{1/2}(z) from z0.

    The state is (z, q^{1/2}(z)); the root is propagated by s' = q'(z) z'/(2 s), so
    the sheet is tracked by the ODE itself and re-projected onto sqrt(q) at every
    sample. ``branch`` fixes q^{1/2}(z0) (default: principal root).
    """
    stop = stop or StopRules()
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    z0 = complex(z0)
    rp, rz = _capture_radii(q, stop)
    for i, a in enumerate(q.zeros):
        if abs(z0 - a) < rz:
            raise ValueError(f"start point inside capture radius of zero {i}")
    for j, p in enumerate(q.pole_locs):
        if abs(z0 - p) < rp:
            raise ValueError(f"start point inside capture radius of pole {j}")
    s0 = np.sqrt(complex(q(z0))) if branch is None else complex(branch)
    if abs(s0 * s0 - q(z0)) > 1e-8 * max(1.0, abs(q(z0))):
        raise ValueError("branch does not square to q(z0)")
    ph = direction * np.exp(1j * theta)

    def rhs(t, y):
        z, s = y
        zd = ph / s
        return np.array([zd, 0.5 * s * complex(q.log_derivative(z)) * zd])

    events = []
    labels = []
    for i, a in enumerate(q.zeros):
        ev = (lambda a: lambda t, y: abs(y[0] - a) - rz)(a)
        ev.terminal = True
        ev.direction = -1
        events.append(ev)
        labels.append(("zero", i))
    for j, p in enumerate(q.pole_locs):
        ev = (lambda p: lambda t, y: abs(y[0] - p) - rp)(p)
        ev.terminal = True
        ev.direction = -1
        events.append(ev)
        labels.append(("pole", j))
    crit = q.critical_points
    r_esc = stop.escape_radius * (1.0 + (np.max(np.abs(crit)) if len(crit) else 0.0))
    esc = lambda t, y: abs(y[0]) - r_esc
    esc.terminal = True
    esc.direction = 1
    events.append(esc)
    labels.append(("pole", "inf") if q.order_at_infinity == 2 else ("infinity", None))
    u0 = ph / s0
    u0 = u0 / abs(u0)
    if stop.closure:
        # crossing of the transversal line through z0 (from behind to in front)
        eta = 1e-3 * min(rp, rz)
        clo = lambda t, y: ((y[0] - z0) * np.conj(u0)).real + eta
        clo.terminal = True
        clo.direction = 1
        events.append(clo)
        labels.append(("closure", None))

    ts, zs, ss = [0.0], [z0], [s0]
    t_now, y_now = 0.0, np.array([z0, s0], dtype=complex)
    end = ("open", None)
    closed = False
    while t_now < stop.max_length:
        sol = solve_ivp(rhs, (t_now, stop.max_length), y_now, method="DOP853", rtol=rtol,
                        atol=1e-14, events=events, dense_output=True)
        if sol.status == -1:
            raise NumericalError(f"integrator failure: {sol.message}")
        t_end = sol.t[-1]
        n = max(1, int(math.ceil((t_end - t_now) / stop.sample_dt)))
        tt = np.linspace(t_now, t_end, n + 1)[1:]
        yy = sol.sol(tt)
        ts.extend(tt)
        zs.extend(yy[0])
        ss.extend(yy[1])
        t_now, y_now = t_end, sol.y[:, -1].copy()
        y_now[1] = _match(q, y_now[0], y_now[1])
        if sol.status != 1:
            break
        hit = [k for k, te in enumerate(sol.t_events) if len(te)]
        k = hit[0]
        if labels[k][0] == "closure":
            z1 = y_now[0]
            u1 = (ph / y_now[1])
            u1 = u1 / abs(u1)
            if abs(z1 - z0) < max(rp, rz, 1e-6) * 10 and (u1 * np.conj(u0)).real > 0.999:
                end = ("closed", None)
                closed = True
                zs[-1] = z1
                break
            # not a closure: step past the event without event detection, then resume
            nudge = solve_ivp(rhs, (t_now, t_now + 1e-3), y_now, method="DOP853", rtol=rtol,
                              atol=1e-14)
            t_now, y_now = nudge.t[-1], nudge.y[:, -1].copy()
            continue
        end = labels[k]
        break
    zs = np.array(zs)
    ss = np.array(ss)
    raw = np.sqrt(q(zs).astype(complex))
    ss = np.where(np.abs(raw - ss) <= np.abs(raw + ss), raw, -raw)
    return Trajectory(np.array(ts), zs, ss, float(theta), direction,
                      (("open", None), end), closed)


def trace_both(q, z0, theta, stop=None, branch=None):
    """Trace in both directions and splice into one trajectory running -t_back .. t_fwd."""
    fwd = trace_trajectory(q, z0, theta, +1, stop, branch)
    if fwd.closed:
        return fwd
    bwd = trace_trajectory(q, z0, theta, -1, stop, branch)
    rb = bwd.reversed()
    t = np.concatenate([rb.t - rb.t[-1], fwd.t[1:]])
    return Trajectory(t, np.concatenate([rb.z, fwd.z[1:]]),
                      np.concatenate([rb.root, fwd.root[1:]]), float(theta), 1,
                      (bwd.ends[1], fwd.ends[1]), False)


def classify(traj: Trajectory) -> str:
    if traj.closed:
        return "periodic"
    kinds = sorted(e[0] for e in traj.ends)
    if "open" in kinds or "infinity" in kinds:
        return "divergent"
    if kinds == ["pole", "pole"]:
        return "generic"
    if kinds == ["pole", "zero"]:
        return "separating"
    return "saddle"


def departure_angles(q: QuadraticDifferential, k: int, theta: float):
    """Directions arg(z - z_k) of the three theta-trajectories at a simple zero (local model)."""
    a = q.zeros[k]
    c = complex(q.norm)
    for i, b in enumerate(q.zeros):
        if i != k:
            c *= a - b
    for p in q.pole_locs:
        c /= (a - p) ** 2
    # w = (2/3) c^{1/2} (z-a)^{3/2}; e^{-i theta} w real
    base = (2.0 / 3.0) * (theta - 0.5 * np.angle(c))
    return [float((base + 2 * np.pi * n / 3) % (2 * np.pi)) for n in range(3)]


def _w_from_zero(q, a, z, n=48):
    # int_a^z q^{1/2} along the segment; z = a + (z-a) u^2 removes the endpoint root
    x, wts = _gauss(n)
    u = 0.5 * (x + 1)
    d = z - a
    zz = a + d * u * u
    sq = np.sqrt(q(zz[::-1]).astype(complex))
    sq = sqrt_tracked(q, zz[::-1], sq[0], exclusion=0.0)[::-1]
    return 0.5 * np.sum(wts * sq * 2 * u * d)


@dataclass
class SeparatrixSet:
    trajectories: list
    angles: list
    collision: bool = False


def _seed_angle(q, a, rho, theta, phi):
    """Newton on Im(e^{-i theta} w(z)) = 0 along the circle |z - a| = rho."""
    for _ in range(20):
        z = a + rho * np.exp(1j * phi)
        w = _w_from_zero(q, a, z)
        f = (np.exp(-1j * theta) * w).imag
        # dw/dphi = q^{1/2} i (z - a)
        wd = _match(q, z, w / (z - a) * 1.5) * 1j * (z - a)
        step = f / (np.exp(-1j * theta) * wd).imag
        phi -= step
        if abs(step) < 1e-14:
            break
    return phi


def separatrices(q: QuadraticDifferential, k: int, theta: float, stop: StopRules | None = None,
                 seed_radius: float | None = None, only: int | None = None):
    """The three theta-trajectories running into zero k, traced outward from a small circle.

    ``angles`` are the tangent directions at the zero. ``only`` restricts the
    tracing to one of the three (the result then holds a single trajectory).
    """
    if not 0 <= k < len(q.zeros):
        raise IndexError(f"no zero with index {k}")
    stop = stop or StopRules()
    a = q.zeros[k]
    rp, rz = _capture_radii(q, stop)
    rho = seed_radius if seed_radius is not None else max(20 * rz, 1e-2 * q.scale())
    out, angles = [], []
    for n, phi0 in enumerate(departure_angles(q, k, theta)):
        if only is not None and n != only:
            continue
        phi = _seed_angle(q, a, rho, theta, phi0)
        # tangent direction at the zero: the seed angle is phi(rho) = phi(0) + O(rho)
        half = _seed_angle(q, a, 0.5 * rho, theta, phi0)
        angles.append(float((2 * half - phi) % (2 * np.pi)))
        z = a + rho * np.exp(1j * phi)
        w = _w_from_zero(q, a, z)
        s = _match(q, z, 1.5 * w / (z - a))
        # choose direction so that z' points away from the zero
        direction = 1 if ((np.exp(1j * theta) / s) * np.exp(-1j * phi)).real > 0 else -1
        tr = trace_trajectory(q, z, theta, direction, StopRules(**{**stop.__dict__, "closure": False}),
                              branch=s)
        tr.ends = (("zero", k), tr.ends[1])
        out.append(tr)
    collision = False
    ends = [tr.z[-1] for tr in out]
    for i in range(len(out)):
        for j in range(i):
            if out[i].ends[1] == out[j].ends[1] and out[i].ends[1][0] != "pole" and \
                    abs(ends[i] - ends[j]) < 10 * rz:
                collision = True
    return SeparatrixSet(out, angles, collision)


def period(q: QuadraticDifferential, cycle: ContourPath, branch_seed: complex | None = None,
           quad: Quadrature = DEFAULT_QUAD, exclusion: float | None = None):
    """Z = (1/pi) * contour integral of q^{1/2} with sheet tracking."""
    if exclusion is None:
        exclusion = 1e-3 * q.scale()
    start = cycle.center + cycle.radius if cycle.is_circle else cycle.nodes[0]
    if branch_seed is None:
        branch_seed = np.sqrt(complex(q(start)))
    val = integrate_contour(lambda z: np.sqrt(complex(q(z))), cycle, quad,
                            singularities=list(q.critical_points), exclusion=exclusion,
                            tracked=True, branch=branch_seed)
    return val / np.pi


@dataclass
class SaddleEvent:
    theta_c: float
    zeros: tuple
    Z: complex
    low_confidence: bool = False
    miss: float = 0.0

    def to_dict(self):
        return {"theta_c": self.theta_c, "zeros": list(self.zeros),
                "Z": [self.Z.real, self.Z.imag], "low_confidence": self.low_confidence,
                "miss": self.miss}


def _chord_period(q, a, b, n=64):
    """(2/pi) int_a^b q^{1/2} along the chord with a cosine map removing endpoint roots."""
    x, wts = _gauss(n)
    s = 0.5 * (x + 1)
    zz = a + (b - a) * 0.5 * (1 - np.cos(np.pi * s))
    dz = (b - a) * 0.5 * np.pi * np.sin(np.pi * s)
    sq = sqrt_tracked(q, zz, np.sqrt(complex(q(zz[0]))), exclusion=0.0)
    return (2 / np.pi) * 0.5 * np.sum(wts * sq * dz)


def _miss(q, tr, j):
    """Signed miss of trajectory samples relative to zero j and the unsigned distance."""
    d = np.abs(tr.z - q.zeros[j])
    m = int(np.argmin(d))
    v = tr.velocity()[m]
    side = (np.conj(v) * (q.zeros[j] - tr.z[m])).imag
    return math.copysign(d[m], side), float(d[m])


def find_saddles(q: QuadraticDifferential, thetas: Sequence[float], tol: float = 1e-6,
                 stop: StopRules | None = None, max_iter: int = 60, near: float = 0.5,
                 bracket_width: float | None = None):
    """Scan a grid of angles for zero-to-zero trajectories and refine by bisection.

    Consecutive grid angles form the brackets; a sign change of the signed miss
    distance of a separatrix relative to another zero triggers refinement.
    Brackets wider than ``bracket_width`` (default 1.5 x the median spacing)
    are gaps in the grid and are not searched.
    """
    if not len(q.zeros):
        return []
    stop = stop or StopRules(max_length=20.0)
    rp, rz = _capture_radii(q, stop)
    scale = q.scale()
    thetas = list(thetas)
    if bracket_width is None:
        bracket_width = 1.5 * float(np.median(np.diff(thetas))) if len(thetas) > 1 else 0.0

    def misses(theta):
        res = {}
        for i in range(len(q.zeros)):
            sep = separatrices(q, i, theta, stop)
            for n, tr in enumerate(sep.trajectories):
                for j in range(len(q.zeros)):
                    if j != i:
                        res[(i, n, j)] = _miss(q, tr, j)
        return res

    grid = [misses(th) for th in thetas]
    events = []
    for g in range(len(thetas) - 1):
        if thetas[g + 1] - thetas[g] > bracket_width * (1 + 1e-12):
            continue
        for key, (m0, d0) in grid[g].items():
            m1, d1 = grid[g + 1][key]
            hit0 = d0 <= rz * 1.0001
            if not (hit0 or (m0 * m1 < 0 and max(d0, d1) < near * scale)):
                continue
            lo, hi = thetas[g], thetas[g + 1]
            flo = m0
            conf = True
            it = 0
            while hi - lo > tol:
                it += 1
                if it > max_iter:
                    conf = False
                    break
                mid = 0.5 * (lo + hi)
                i, n, j = key
                tr = separatrices(q, i, mid, stop, only=n).trajectories[0]
                fm, dm = _miss(q, tr, j)
                if fm * flo > 0:
                    lo, flo = mid, fm
                else:
                    hi = mid
            th = 0.5 * (lo + hi)
            i, n, j = key
            tr = separatrices(q, i, th, stop, only=n).trajectories[0]
            miss = _miss(q, tr, j)[1]
            if miss > max(near * scale * 0.1, 50 * rz):
                continue
            Z = _chord_period(q, q.zeros[i], q.zeros[j])
            if (np.exp(-1j * th) * Z).real < 0:
                Z = -Z
            ev = SaddleEvent(float(th), tuple(sorted((i, j))),
                             complex(Z), not conf, miss)
            if not any(e.zeros == ev.zeros and abs(e.theta_c - ev.theta_c) < 1e3 * tol
                       for e in events):
                events.append(ev)
    return events
