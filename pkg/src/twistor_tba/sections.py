"""Small flat sections of a synthetic limiting configuration and the coordinate X_E.

Along a theta-trajectory in standard parametrization (q^{1/2} z' = -e^{i theta})
a flat section solves

    s' = [diag(lambda_1, -lambda_2) + E] s,

with leading entries built from q, a_1, a_2 and an error matrix E supplied by
an :class:`ErrorModel`. Sections are stored in "sink form": for a vertex the
curve is parametrised by u running into the vertex, the leading exponential is
detached and the remainder x solves a Volterra equation at u = inf. Sections at
vertices the curve emerges from use the reversed parameter and swapped
components, so one solver serves both vertex types.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .numerics import DEFAULT_QUAD, ContourPath, NumericalError, Quadrature, integrate_contour
from .quaddiff import (QuadraticDifferential, StopRules, Trajectory, period, sqrt_tracked,
                       trace_both, trace_trajectory)
from .volterra import (ContractionError, GridSolution, GridSpec, IvpAtInfinity, solve_derivative, solve_finite,
                       solve_ivp_infinity)

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])
SECTION_GRID = GridSpec(order=8, h_min=0.05, h_max=1.0, growth=1.5)


class DegenerateWedgeError(NumericalError):
    """Two sections are linearly dependent at the evaluation point."""


class GeometryError(NumericalError):
    """Sides or connectors do not match the declared quadrilateral."""


def in_half_plane(zeta: complex, theta: float) -> bool:
    """zeta in H_theta, i.e. |arg zeta - theta| < pi/2."""
    return zeta != 0 and (zeta * np.exp(-1j * theta)).real > 0


class PoleField:
    """a(z) = c_0 + sum_k c_k / (z - w_k)."""

    def __init__(self, points=(), residues=(), constant=0.0):
        self.points = np.array([complex(p) for p in points], dtype=complex)
        self.residues = np.array([complex(c) for c in residues], dtype=complex)
        if len(self.points) != len(self.residues):
            raise ValueError("points and residues must have equal length")
        self.constant = complex(constant)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.full(z.shape, self.constant, dtype=complex)
        for w, c in zip(self.points, self.residues):
            out = out + c / (z - w)
        return out

    def __neg__(self):
        return PoleField(self.points, -self.residues, -self.constant)

    def __add__(self, other):
        return PoleField(np.concatenate([self.points, other.points]),
                         np.concatenate([self.residues, other.residues]),
                         self.constant + other.constant)

    def to_dict(self):
        return {"points": [[p.real, p.imag] for p in self.points],
                "residues": [[c.real, c.imag] for c in self.residues],
                "constant": [self.constant.real, self.constant.imag]}

    @classmethod
    def from_dict(cls, d):
        c = lambda v: complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v)
        d = d or {}
        return cls([c(p) for p in d.get("points", [])], [c(r) for r in d.get("residues", [])],
                   c(d.get("constant", 0.0)))


@dataclass(frozen=True)
class ErrorModel:
    """Synthetic error matrix C e^{-delta R} r^mu [[f1, f2], [f3, -f1]].

    r is the distance to the nearest pole of q and the f_i are unimodular
    phases exp(i(alpha_i + beta_i x + gamma_i y)) drawn from ``seed``. The
    ``flipped`` variant (used at theta + pi) conjugates and swaps f2, f3.
    """
    mu: float = 1.0
    delta: float = 0.5
    C: float = 0.0
    seed: int = 0
    flipped: bool = False

    def __post_init__(self):
        if not (self.mu > 0 and self.delta > 0):
            raise ValueError("mu and delta must be positive")
        if self.C < 0:
            raise ValueError("amplitude C must be non-negative")

    def amplitude(self, R):
        return self.C * math.exp(-self.delta * R)

    def _coeffs(self):
        rng = np.random.default_rng(self.seed)
        return rng.uniform(0, 2 * np.pi, 3), rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)

    def hat(self, z, R, poles):
        z = np.asarray(z, dtype=complex)
        if len(poles):
            r = np.min(np.abs(z[..., None] - np.asarray(poles)), axis=-1)
        else:
            r = np.ones(z.shape)
        mag = self.amplitude(R) * r ** self.mu
        al, be, ga = self._coeffs()
        f = [np.exp(1j * (al[i] + be[i] * z.real + ga[i] * z.imag)) for i in range(3)]
        if self.flipped:
            f = [np.conj(f[0]), np.conj(f[2]), np.conj(f[1])]
        out = np.empty(z.shape + (2, 2), dtype=complex)
        out[..., 0, 0] = mag * f[0]
        out[..., 0, 1] = mag * f[1]
        out[..., 1, 0] = mag * f[2]
        out[..., 1, 1] = -mag * f[0]
        return out

    def to_dict(self):
        return {"mu": self.mu, "delta": self.delta, "C": self.C, "seed": self.seed,
                "flipped": self.flipped}


@dataclass(frozen=True, eq=False)
class HiggsLocalModel:
    """Synthetic limiting configuration with an error model.

    ``eps`` deforms the error amplitude, C -> C (1 + eps); it is the model
    parameter used for derivative checks.
    """
    q: QuadraticDifferential
    a1: PoleField = field(default_factory=PoleField)
    a2: PoleField = field(default_factory=PoleField)
    error: ErrorModel = field(default_factory=ErrorModel)
    R: float = 1.0
    zeta: complex = 1.0
    theta: float = 0.0
    eps: float = 0.0

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("R must be positive")
        object.__setattr__(self, "zeta", complex(self.zeta))
        if not in_half_plane(self.zeta, self.theta):
            raise ValueError(f"zeta={self.zeta} is not in the half-plane centred at theta={self.theta}")

    def with_(self, **kw):
        return replace(self, **kw)

    def antipodal(self):
        """The model at theta + pi and -1/conj(zeta) with the conjugate error model."""
        return replace(self, theta=self.theta + np.pi, zeta=-1.0 / np.conj(self.zeta),
                       error=replace(self.error, flipped=not self.error.flipped))

    def kappa(self, curve_theta):
        """Constant part of lambda_j along a curve_theta-trajectory."""
        w = -np.exp(1j * curve_theta)
        return -(self.R / self.zeta) * w - self.R * self.zeta * np.conj(w)

    def lambdas(self, z, v, curve_theta):
        """Pointwise lambda_1, lambda_2 for velocity v along a curve_theta-trajectory."""
        k = self.kappa(curve_theta)
        a1v = self.a1(z) * v
        a2v = self.a2(z) * v
        return k + a1v - np.conj(a1v), k - a2v + np.conj(a2v)

    def error_matrix(self, z, v, root):
        """E for velocity v; the factor Re(-e^{-i theta} q^{1/2} v) is 1 on theta-trajectories."""
        g = (-np.exp(-1j * self.theta) * root * v).real
        Eh = self.error.hat(z, self.R, self.q.pole_locs)
        return (1.0 + self.eps) * Eh * np.asarray(g)[..., None, None]

    def to_dict(self):
        return {"q": self.q.to_dict(), "a1": self.a1.to_dict(), "a2": self.a2.to_dict(),
                "error": self.error.to_dict(), "R": self.R,
                "zeta": [self.zeta.real, self.zeta.imag], "theta": self.theta, "eps": self.eps}

    @classmethod
    def from_dict(cls, d):
        z = d.get("zeta", 1.0)
        zeta = complex(z[0], z[1]) if isinstance(z, (list, tuple)) else complex(z)
        err = dict(d.get("error", {}))
        return cls(QuadraticDifferential.from_dict(d["q"]), PoleField.from_dict(d.get("a1")),
                   PoleField.from_dict(d.get("a2")), ErrorModel(**err), float(d.get("R", 1.0)),
                   zeta, float(d.get("theta", 0.0)), float(d.get("eps", 0.0)))


class Curve:
    """Dense trajectory in standard parametrization, q^{1/2}(z) z' = -e^{i theta}.

    Inside the traced range z(t) is a Hermite spline through the samples; past
    an end at a pole it continues as the local log-spiral
    z = p + (z_end - p) exp(k (t - t_end)).
    """

    def __init__(self, q, t, z, root, theta, ends=(("open", None), ("open", None))):
        self.q = q
        self.t = np.asarray(t, dtype=float)
        self.z = np.asarray(z, dtype=complex)
        self.root = np.asarray(root, dtype=complex)
        self.theta = float(theta)
        self.ends = tuple(ends)
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("curve parameter must be increasing")
        self._v = -np.exp(1j * self.theta) / self.root
        self._spline = CubicHermiteSpline(self.t, self.z, self._v)
        self._unwrapped = {}
        self._ext = []
        for k, (kind, idx) in enumerate(self.ends):
            j = 0 if k == 0 else -1
            if kind == "pole" and idx != "inf":
                p = complex(q.pole_locs[idx])
                ze = self.z[j]
                self._ext.append((p, ze, self._v[j] / (ze - p), self.t[j], self.root[j]))
            else:
                self._ext.append(None)

    @classmethod
    def from_trajectory(cls, q, tr: Trajectory, branch: complex | None = None):
        """Standard-parametrized curve through the samples of ``tr``.

        ``branch`` picks the sign of q^{1/2} at the first sample (default: the
        traced root); the orientation follows from it.
        """
        s = 1.0
        if branch is not None and abs(tr.root[0] - branch) > abs(tr.root[0] + branch):
            s = -1.0
        root = s * tr.root
        sgn = -tr.direction * s  # t_std = sgn * t_traced
        t, z, r, ends = sgn * tr.t, tr.z, root, tr.ends
        if sgn < 0:
            t, z, r, ends = t[::-1], z[::-1], r[::-1], ends[::-1]
        return cls(q, t, z, r, tr.theta, ends)

    def reversed(self):
        """The same point set as a (theta + pi)-trajectory; the root is unchanged."""
        return Curve(self.q, -self.t[::-1], self.z[::-1], self.root[::-1], self.theta + np.pi,
                     self.ends[::-1])

    @property
    def t_range(self):
        lo = -np.inf if self._ext[0] is not None else self.t[0]
        hi = np.inf if self._ext[1] is not None else self.t[-1]
        return lo, hi

    def _region(self, t):
        lo = t < self.t[0]
        hi = t > self.t[-1]
        if (np.any(lo) and self._ext[0] is None) or (np.any(hi) and self._ext[1] is None):
            raise ValueError("parameter outside the traced range of the curve")
        return lo, hi

    def __call__(self, t):
        """(z, z', q^{1/2}) at parameters t."""
        t = np.asarray(t, dtype=float)
        lo, hi = self._region(t)
        tc = np.clip(t, self.t[0], self.t[-1])
        z = np.asarray(self._spline(tc), dtype=complex)
        ref = np.interp(tc, self.t, self.root.real) + 1j * np.interp(tc, self.t, self.root.imag)
        v = None
        for mask, ext in ((lo, self._ext[0]), (hi, self._ext[1])):
            if ext is not None and np.any(mask):
                p, ze, k, te, re = ext
                dz = (ze - p) * np.exp(k * (t[mask] - te))
                z[mask] = p + dz
                ref[mask] = re * (ze - p) / dz
        raw = np.sqrt(self.q(z).astype(complex))
        root = np.where(np.abs(raw - ref) <= np.abs(raw + ref), raw, -raw)
        v = -np.exp(1j * self.theta) / root
        for mask, ext in ((lo, self._ext[0]), (hi, self._ext[1])):
            if ext is not None and np.any(mask):
                p, ze, k, te, re = ext
                v[mask] = k * (z[mask] - p)
        return z, v, root

    def _where(self, t):
        """Curve points, nearest-sample indices and extension masks at parameters t."""
        t = np.asarray(t, dtype=float)
        lo, hi = self._region(t)
        z = self(t)[0]
        tc = np.clip(t, self.t[0], self.t[-1])
        i = np.clip(np.searchsorted(self.t, tc), 0, len(self.t) - 1)
        j = np.clip(i - 1, 0, len(self.t) - 1)
        i = np.where(np.abs(self.t[j] - tc) < np.abs(self.t[i] - tc), j, i)
        return t, z, i, lo, hi

    def clog(self, w, t, where=None):
        """Continuous branch of log(z(t) - w) along the curve."""
        w = complex(w)
        t, z, i, lo, hi = where if where is not None else self._where(t)
        if w not in self._unwrapped:
            d = self.z - w
            if np.min(np.abs(d)) == 0:
                raise ValueError("curve passes through a singular point of the field")
            self._unwrapped[w] = np.unwrap(np.angle(d))
        U = self._unwrapped[w]
        out = np.log(np.abs(z - w)) + 1j * (U[i] + np.angle((z - w) / (self.z[i] - w)))
        for mask, ext, e in ((lo, self._ext[0], 0), (hi, self._ext[1], -1)):
            if ext is not None and np.any(mask):
                p, ze, k, te, re = ext
                base = math.log(abs(ze - w)) + 1j * U[e]
                if abs(w - p) < 1e-12 * (1 + abs(p)):
                    out[mask] = base + k * (t[mask] - te)
                else:
                    out[mask] = base + np.log((z[mask] - w) / (ze - w))
        return out

    def prim(self, a: PoleField, t, where=None):
        """Primitive of a dz along the curve (absolute; only differences are meaningful)."""
        where = where if where is not None else self._where(t)
        out = a.constant * where[1]
        for w, c in zip(a.points, a.residues):
            out = out + c * self.clog(w, None, where)
        return out

    def locate(self, point):
        return float(self.t[int(np.argmin(np.abs(self.z - point)))])


def _primitives(model: HiggsLocalModel, curve: Curve, t):
    """Lambda_1(t), Lambda_2(t) along the curve (absolute, differences meaningful)."""
    k = model.kappa(curve.theta)
    where = curve._where(t)
    t = where[0]
    I1 = curve.prim(model.a1, t, where)
    I2 = curve.prim(model.a2, t, where)
    return k * t + (I1 - np.conj(I1)), k * t - (I2 - np.conj(I2))


@dataclass
class Leg:
    """Curve parametrised by u with t = t0 + sigma u (u runs into the vertex)."""
    curve: Curve
    sigma: int
    t0: float = 0.0

    def t_of(self, u):
        return self.t0 + self.sigma * np.asarray(u, dtype=float)

    def u_of(self, t):
        return self.sigma * (np.asarray(t, dtype=float) - self.t0)


class _SinkForm:
    """Sink-form data on a leg: primitives L_1, L_2 and error matrix F in u."""

    def __init__(self, model: HiggsLocalModel, leg: Leg):
        self.model, self.leg = model, leg
        c = leg.curve
        if not in_half_plane(model.zeta, c.theta):
            raise ValueError("zeta is not in the half-plane of the curve angle")
        l1, l2 = _primitives(model, c, np.array([leg.t0]))
        self._ref = (l1[0], l2[0])

    def L(self, u):
        """(L_1(u), L_2(u)) with L(0) = 0."""
        t = self.leg.t_of(u)
        l1, l2 = _primitives(self.model, self.leg.curve, t)
        l1, l2 = l1 - self._ref[0], l2 - self._ref[1]
        if self.leg.sigma > 0:
            return l1, l2
        return -l2, -l1

    def phase(self, u):
        l1, l2 = self.L(u)
        u = np.asarray(u, dtype=float)
        return np.stack([l1 + l2, np.zeros(u.shape, dtype=complex)], axis=-1)

    def F(self, u):
        t = self.leg.t_of(u)
        z, v, root = self.leg.curve(t)
        E = self.model.error_matrix(z, self.leg.sigma * v, root)
        if self.leg.sigma > 0:
            return E
        return SWAP @ E @ SWAP

    def lambdas(self, u):
        t = self.leg.t_of(u)
        z, v, _ = self.leg.curve(t)
        l1, l2 = self.model.lambdas(z, v, self.leg.curve.theta)
        return (l1, l2) if self.leg.sigma > 0 else (l2, l1)


def leading_terms(model: HiggsLocalModel, traj, t=None):
    """(lambda_1, lambda_2, Lambda_1, Lambda_2) sampled along a trajectory.

    ``traj`` is a :class:`Curve` or a standard-parametrized :class:`Trajectory`
    (q^{1/2} z' = -e^{i theta}). Primitives are anchored at the first sample.
    """
    curve = traj if isinstance(traj, Curve) else Curve.from_trajectory(model.q, traj)
    if not in_half_plane(model.zeta, curve.theta):
        raise ValueError("zeta is not in the half-plane centred at the trajectory angle")
    t = curve.t if t is None else np.asarray(t, dtype=float)
    z, v, _ = curve(t)
    l1, l2 = model.lambdas(z, v, curve.theta)
    L1, L2 = _primitives(model, curve, t)
    return l1, l2, L1 - L1[0], L2 - L2[0]


@dataclass
class SmallFlatSection:
    """s = exp(logc - L_2(u)) * x(u) in sink form; physical vector is x or SWAP x.

    The normalization is x -> (0, 1) as u -> inf.
    """
    leg: Leg
    x: GridSolution
    form: _SinkForm = field(repr=False)
    problem: IvpAtInfinity = field(repr=False, default=None)
    logc: complex = 0.0
    dx: GridSolution | None = field(repr=False, default=None)
    dlogc: complex = 0.0
    eps: complex = 0.0  # transport epsilon when obtained by transport

    @property
    def u_min(self):
        return float(self.x.grid[0])

    def remainder_sup(self):
        v = self.x.values.copy()
        v[:, 1] -= 1.0
        return float(np.max(np.abs(v)))

    def sink_vector(self, t):
        return self.x(self.leg.u_of(np.atleast_1d(t)))

    def vector(self, t):
        v = self.sink_vector(t)
        return v if self.leg.sigma > 0 else v[:, ::-1]

    def dvector(self, t):
        if self.dx is None:
            return None
        v = self.dx(self.leg.u_of(np.atleast_1d(t)))
        return v if self.leg.sigma > 0 else v[:, ::-1]

    def log_prefactor(self, t):
        u = self.leg.u_of(np.atleast_1d(t))
        return self.logc - self.form.L(u)[1]

    def __call__(self, t):
        """Physical section (may overflow for large R/|zeta|)."""
        return np.exp(self.log_prefactor(t))[:, None] * self.vector(t)

    def rescaled(self, c):
        return replace(self, logc=self.logc + np.log(complex(c)))


def small_flat_section(model: HiggsLocalModel, curve: Curve, sigma: int = 1, u_min: float = -0.1,
                       grid: GridSpec = SECTION_GRID, quad: Quadrature = DEFAULT_QUAD,
                       derivative: bool = False, tol: float = 1e-14) -> SmallFlatSection:
    """Small flat section for the vertex at the sigma-end of the curve.

    sigma = +1: the vertex the curve runs into (limit (0, 1) after detaching
    e^{-Lambda_2}); sigma = -1: the vertex it emerges from (limit (1, 0) after
    detaching e^{Lambda_1}).
    """
    if sigma not in (1, -1):
        raise ValueError("sigma must be +1 or -1")
    leg = Leg(curve, sigma, 0.0)
    form = _SinkForm(model, leg)
    one = np.array([0.0, 1.0], dtype=complex)
    a = lambda u: np.broadcast_to(one, np.shape(u) + (2,))
    prob = IvpAtInfinity(float(u_min), a, None, form.F, n=2, a_inf=one, phase=form.phase)
    try:
        x = solve_ivp_infinity(prob, grid, quad, tol=tol)
    except ContractionError as e:
        raise ContractionError(f"{e}; the error kernel is not small enough, increase R", e.lam) from None
    dx = None
    if derivative:
        dB = lambda u: form.F(u) / (1.0 + model.eps)
        dx = solve_derivative(prob, None, x, dB=dB, tol=tol)
    return SmallFlatSection(leg, x, form, prob, dx=dx)


@dataclass
class Connector:
    """Tilted trajectory joining the target side (landing) to the primary side (hit) near a vertex."""
    curve: Curve
    vertex: complex
    sigma: int
    t_land: float  # on the connector
    t_hit: float
    tg_land: float  # on the target side
    tp_hit: float  # on the primary side

    @property
    def length(self):
        return abs(self.t_hit - self.t_land)

    @property
    def leg(self):
        return Leg(self.curve, self.sigma, self.t_land)

    @property
    def u_hit(self):
        return self.sigma * (self.t_hit - self.t_land)


def _seg_intersections(a, b):
    """First intersection (along a) of polylines a and b: (i, s, j, r) with a_i + s da_i = b_j + r db_j."""
    a0, da = a[:-1], np.diff(a)
    b0, db = b[:-1], np.diff(b)
    for lo in range(0, len(a0), 512):
        A0, DA = a0[lo:lo + 512, None], da[lo:lo + 512, None]
        den = (np.conj(DA) * db[None, :]).imag
        w = b0[None, :] - A0
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (np.conj(w) * db[None, :]).imag / den
            r = (np.conj(w) * DA).imag / den
        ok = (den != 0) & (s >= 0) & (s <= 1) & (r >= 0) & (r <= 1)
        if np.any(ok):
            ii, jj = np.nonzero(ok)
            k = int(np.argmin(ii + s[ii, jj]))
            return lo + int(ii[k]), float(s[ii[k], jj[k]]), int(jj[k]), float(r[ii[k], jj[k]])
    return None


def _newton_meet(c1: Curve, t1, c2: Curve, t2, tol=1e-13):
    for _ in range(50):
        z1, v1, _ = c1(np.array([t1]))
        z2, v2, _ = c2(np.array([t2]))
        f = z1[0] - z2[0]
        J = np.array([[v1[0].real, -v2[0].real], [v1[0].imag, -v2[0].imag]])
        d = np.linalg.solve(J, [-f.real, -f.imag])
        t1, t2 = t1 + d[0], t2 + d[1]
        if abs(d[0]) + abs(d[1]) < tol:
            break
    return float(t1), float(t2)


def _winding(z, point):
    """Winding number of the closed polyline z (last point joined to the first) about point."""
    w = np.append(z, z[0]) - point
    return int(round(np.sum(np.angle(w[1:] / w[:-1])) / (2 * np.pi)))


def build_connector(q: QuadraticDifferential, primary: Curve, target: Curve, vertex: complex,
                    sigma: int, depth: float = 0.2, tilt: float = 0.6,
                    tilt_sign: int | None = None) -> Connector:
    """Connector near ``vertex`` from the target side to the primary side.

    The landing point is where the target side reaches ``depth`` times the
    distance of its t = 0 point from the vertex. The tilt sign is the one for
    which the chain z_P(0) -> hit -> landing -> z_G(0), closed by a segment,
    does not wind around the vertex, so the connector turns on the side of
    the vertex facing the evaluation points.
    """
    zt0 = target(np.array([0.0]))[0][0]
    d0 = abs(zt0 - vertex)
    g = lambda t: abs(target(np.array([t]))[0][0] - vertex) - depth * d0
    # walk along the target side toward the vertex
    step = 0.5
    t = 0.0
    while g(t + sigma * step) > 0:
        t += sigma * step
        if abs(t) > 500:
            raise GeometryError("target side does not approach the vertex")
    tg = brentq(g, min(t, t + sigma * step), max(t, t + sigma * step), xtol=1e-14)
    zL, _, rootL = target(np.array([tg]))
    zL, rootL = zL[0], rootL[0]
    sel = (primary.t >= 0) if sigma > 0 else (primary.t <= 0)
    near = np.abs(primary.z - vertex) < 1.5 * depth * d0
    idx = np.flatnonzero(sel & near)
    if not len(idx):
        raise GeometryError("primary side has no samples near the vertex")
    direction = -1 if sigma > 0 else 1
    # the tracer slows down deep inside the pole; the curve extension covers the rest
    stop = StopRules(max_length=200.0, pole_capture=1e-6 * d0, zero_capture=None,
                     closure=False, sample_dt=0.005)
    found = []
    for sgn in ((tilt_sign,) if tilt_sign else (1, -1)):
        tr = trace_trajectory(q, zL, target.theta + sgn * tilt, direction, stop, branch=rootL)
        # coarse search on thinned polylines; Newton refines the crossing below
        ka = max(1, len(tr.z) // 800)
        kb = max(1, (idx[-1] + 1 - idx[0]) // 800)
        pz = primary.z[idx[0]:idx[-1] + 1]
        ia = np.append(np.arange(0, len(tr.z), ka), len(tr.z) - 1)
        ib = np.append(np.arange(0, len(pz), kb), len(pz) - 1)
        hit = _seg_intersections(tr.z[ia], pz[ib])
        if hit is None:
            continue
        i, s, j, r = hit
        fa = ia[i] + s * (ia[i + 1] - ia[i])  # fractional sample indices
        fb = idx[0] + ib[j] + r * (ib[j + 1] - ib[j])
        t_tr = float(np.interp(fa, np.arange(len(tr.t)), tr.t))
        tp = float(np.interp(fb, np.arange(len(primary.t)), primary.t))
        chain = np.concatenate([_side_piece(primary, 0.0, tp), tr.z[int(fa)::-1],
                                _side_piece(target, tg, 0.0)])
        if tilt_sign is None and _winding(chain, vertex) != 0:
            continue
        curve = Curve.from_trajectory(q, tr, branch=rootL)
        t_c = -direction * t_tr  # standard parameter
        t_c, tp = _newton_meet(curve, t_c, primary, tp)
        found.append(Connector(curve, complex(vertex), sigma, 0.0, t_c, float(tg), tp))
    if not found:
        raise GeometryError("no connector reaches the primary side on the inner side of the vertex")
    return min(found, key=lambda c: c.length)


def _side_piece(curve: Curve, ta, tb):
    """Samples of the curve between parameters ta and tb, in that order."""
    lo, hi = min(ta, tb), max(ta, tb)
    m = (curve.t >= lo) & (curve.t <= hi)
    z = curve.z[m]
    return z if ta <= tb else z[::-1]


def transport_section(model: HiggsLocalModel, section: SmallFlatSection, connector: Connector,
                      target: SmallFlatSection | None = None, target_curve: Curve | None = None,
                      grid: GridSpec = SECTION_GRID, quad: Quadrature = DEFAULT_QUAD,
                      tol: float = 1e-14) -> SmallFlatSection:
    """Carry ``section`` across the connector onto the adjacent side.

    Solves the finite-interval equation along the connector from the primary
    side (terminal value) back to the landing point; the result is the
    adjacent side's own normalized small section times exp(logc) with
    logc = log(1 + eps) + primitive offsets.
    """
    if target is None:
        if target_curve is None:
            raise ValueError("either target or target_curve is required")
        u_need = connector.sigma * connector.tg_land
        target = small_flat_section(model, target_curve, connector.sigma,
                                    min(-0.1, u_need - 0.1), grid, quad,
                                    derivative=section.dx is not None, tol=tol)
    if target.leg.sigma != section.leg.sigma or connector.sigma != section.leg.sigma:
        raise ValueError("section, connector and target must refer to the same vertex type")
    cleg = connector.leg
    cform = _SinkForm(model, cleg)
    b = connector.u_hit
    if not b > 0:
        raise GeometryError("connector must run toward the vertex")
    uP = section.leg.u_of(connector.tp_hit)
    xb = section.x(np.array([uP]))[0]
    k = section.logc - section.form.L(np.array([uP]))[1][0] + cform.L(np.array([b]))[1][0]
    xt = solve_finite(None, 0.0, b, xb, B=cform.F, phase=cform.phase, grid=grid, tol=tol)
    x0 = xt.values[0]
    uG = target.leg.u_of(connector.tg_land)
    xg = target.x(np.array([uG]))[0]
    ratio = x0[1] / xg[1]
    logc = k + target.form.L(np.array([uG]))[1][0] + np.log(ratio)
    out = replace(target, logc=logc, eps=ratio - 1.0)
    out.mismatch = float(abs(x0[0] - ratio * xg[0]))
    if section.dx is not None and target.dx is not None:
        dxb = section.dx(np.array([uP]))[0]
        Phi = lambda u: np.exp(np.asarray(cform.phase(u))[..., 0] - cform.phase(np.array([b]))[0, 0])
        da = lambda u: np.stack([Phi(u) * dxb[0], np.broadcast_to(dxb[1], np.shape(u))], -1)
        prob = IvpAtInfinity(0.0, lambda u: np.stack([Phi(u) * xb[0], np.broadcast_to(xb[1], np.shape(u))], -1),
                             None, cform.F, n=2, phase=cform.phase)
        dB = lambda u: cform.F(u) / (1.0 + model.eps)
        dxt = solve_derivative(prob, da, xt, dB=dB, tol=tol)
        dx0 = dxt.values[0]
        dxg = target.dx(np.array([uG]))[0]
        out.dlogc = section.dlogc + dx0[1] / x0[1] - dxg[1] / xg[1]
    return out


def wedge(s1: SmallFlatSection, s2: SmallFlatSection, t: float = 0.0, log: bool = False,
          tol: float = 1e-12):
    """det[s1, s2] at parameter t of their common curve (log form with ``log=True``)."""
    if s1.leg.curve is not s2.leg.curve:
        raise ValueError("sections must live on the same curve")
    v1, v2 = s1.vector(t)[0], s2.vector(t)[0]
    det = v1[0] * v2[1] - v1[1] * v2[0]
    if abs(det) < tol * np.linalg.norm(v1) * np.linalg.norm(v2):
        raise DegenerateWedgeError("sections are linearly dependent (wrong decoration pairing?)")
    lp = s1.log_prefactor(t)[0] + s2.log_prefactor(t)[0]
    return lp + np.log(det) if log else np.exp(lp) * det


def _dlog_wedge(s1, s2, t):
    v1, v2 = s1.vector(t)[0], s2.vector(t)[0]
    d1 = s1.dvector(t)
    d2 = s2.dvector(t)
    d1 = np.zeros(2) if d1 is None else d1[0]
    d2 = np.zeros(2) if d2 is None else d2[0]
    det = v1[0] * v2[1] - v1[1] * v2[0]
    dd = (d1[0] * v2[1] - d1[1] * v2[0]) + (v1[0] * d2[1] - v1[1] * d2[0])
    return dd / det + s1.dlogc + s2.dlogc


def liouville_exponent(model: HiggsLocalModel, legs) -> complex:
    """int (a1 + a2) dz - conj((a1 + a2) dz) over a chain of (curve, t_start, t_end) pieces,
    or over a ContourPath."""
    a = model.a1 + model.a2
    if isinstance(legs, ContourPath):
        I = integrate_contour(a, legs)
    else:
        I = 0j
        for curve, ta, tb in legs:
            I += complex(np.diff(curve.prim(a, np.array([ta, tb])))[0])
    return I - np.conj(I)


def wedge_transport(value, path, model: HiggsLocalModel, log: bool = False):
    """Transport a wedge value along ``path`` by the Liouville factor."""
    e = liouville_exponent(model, path)
    return value + e if log else value * np.exp(e)


# vertex roles for sides 1..4: (vertex run into, vertex emerged from)
_SIDE_VERTS = ((0, 3), (0, 1), (2, 1), (2, 3))
_PRIMARY = (0, 1, 2, 3)  # side k+1 carries the primary section of vertex p_{k+1}
_TARGET = (1, 2, 3, 0)


class QuadrilateralModel:
    """Four sides gamma_1..gamma_4 around vertices p_1..p_4 (clockwise, p_1 a sink).

    gamma_1 joins p_4 -> p_1, gamma_2 joins p_2 -> p_1, gamma_3 joins p_2 -> p_3,
    gamma_4 joins p_4 -> p_3. ``points`` are the evaluation points z_1..z_4 (t = 0
    on each side); ``cycle`` is gamma_E, and its branch is continued from the
    side branch at z_1.
    """

    def __init__(self, q: QuadraticDifferential, theta: float, vertices, points,
                 cycle: ContourPath | None = None, depth: float = 0.2, tilt: float = 0.6,
                 sides=None, cycle_branch=None, max_length: float = 200.0):
        self.q = q
        self.theta = float(theta)
        self.vertices = [int(v) for v in vertices]
        if len(self.vertices) != 4 or len(points) != 4:
            raise ValueError("need four vertices and four evaluation points")
        self.vlocs = [complex(q.pole_locs[v]) for v in self.vertices]
        self.points = [complex(z) for z in points]
        self.depth, self.tilt, self.max_length = depth, tilt, max_length
        self.sides = list(sides) if sides is not None else [self._trace_side(k) for k in range(4)]
        if cycle is None:
            c = complex(np.mean(q.zeros)) if len(q.zeros) else 0j
            rad = 0.5 * (max(abs(q.zeros - c)) + min(abs(q.pole_locs - c)))
            cycle = ContourPath.circle(c, rad, self._orientation())
        self.cycle = cycle
        self.cycle_branch = cycle_branch if cycle_branch is not None else self._branch_at_cycle()
        self._connectors = None

    def _orientation(self):
        z = np.array(self.points)
        area = 0.5 * np.sum((np.conj(z) * np.roll(z, -1)).imag)
        return -1 if area < 0 else 1

    def _trace_side(self, k):
        sink, source = (self.vertices[i] for i in _SIDE_VERTS[k])
        z0 = self.points[k]
        stop = StopRules(max_length=self.max_length, pole_capture=1e-7 * self.q.scale(),
                         closure=False, sample_dt=0.005)
        b = np.sqrt(complex(self.q(z0)))
        for br in (b, -b):
            tr = trace_both(self.q, z0, self.theta, stop, branch=-br)
            ends = tuple(e[1] if e[0] == "pole" else None for e in tr.ends)
            if ends == (source, sink):
                return Curve(self.q, tr.t, tr.z, -tr.root, self.theta, tr.ends)
        raise GeometryError(f"side {k + 1} through {z0} does not join pole {source} to pole {sink}")

    def _branch_at_cycle(self):
        c = self.cycle
        start = c.center + c.radius if c.is_circle else c.nodes[0]
        z1 = self.points[0]
        path = np.linspace(z1, start, 400)
        b0 = self.sides[0](np.array([0.0]))[2][0]
        return complex(sqrt_tracked(self.q, path, b0, exclusion=0.0)[-1])

    def sigma(self, side, vertex_slot):
        sink, source = _SIDE_VERTS[side]
        if vertex_slot == sink:
            return 1
        if vertex_slot == source:
            return -1
        raise ValueError("vertex is not an end of the side")

    @property
    def connectors(self):
        if self._connectors is None:
            out = []
            for v in range(4):
                P, G = _PRIMARY[v], _TARGET[v]
                out.append(build_connector(self.q, self.sides[P], self.sides[G], self.vlocs[v],
                                           self.sigma(P, v), self.depth, self.tilt))
            self._connectors = out
        return self._connectors

    def antipodal(self):
        """The same quadrilateral seen at theta + pi: sources become sinks, labels rotate."""
        perm = [1, 2, 3, 0]
        sides = [self.sides[(k + 1) % 4].reversed() for k in range(4)]
        return QuadrilateralModel(self.q, self.theta + np.pi, [self.vertices[i] for i in perm],
                                  [self.points[(k + 1) % 4] for k in range(4)], self.cycle,
                                  self.depth, self.tilt, sides=sides, cycle_branch=self.cycle_branch,
                                  max_length=self.max_length)

    def to_dict(self):
        c = self.cycle
        cyc = ({"center": [c.center.real, c.center.imag], "radius": c.radius,
                "orientation": c.orientation} if c.is_circle
               else {"nodes": [[z.real, z.imag] for z in c.nodes]})
        return {"theta": self.theta, "vertices": self.vertices,
                "points": [[z.real, z.imag] for z in self.points], "cycle": cyc,
                "depth": self.depth, "tilt": self.tilt}

    @classmethod
    def from_dict(cls, q, d):
        c = lambda v: complex(v[0], v[1])
        cyc = d.get("cycle")
        cycle = None
        if cyc:
            cycle = (ContourPath.circle(c(cyc["center"]), cyc["radius"], cyc.get("orientation", -1))
                     if "center" in cyc else ContourPath.polyline([c(z) for z in cyc["nodes"]]))
        return cls(q, float(d.get("theta", 0.0)), d["vertices"], [c(z) for z in d["points"]],
                   cycle, float(d.get("depth", 0.2)), float(d.get("tilt", 0.6)))


def standard_example(theta: float = 0.0, **kw) -> QuadrilateralModel:
    """q = 1024 (z^2 - 1)/((z^2 - 4)^2 (z^2 + 4)^2): zeros +-1 inside the quadrilateral
    with vertices 2, -2i, -2, 2i."""
    q = QuadraticDifferential([1, -1], [2, -2, 2j, -2j], norm=1024)
    return QuadrilateralModel(q, theta, [0, 3, 1, 2],
                              [1.2 + 1.2j, 1.2 - 1.2j, -1.2 - 1.2j, -1.2 + 1.2j], **kw)


@dataclass
class XCoordinate:
    log_value: complex  # log X_E (imaginary part modulo 2 pi)
    leading_log: complex  # log of -exp(R pi Z/zeta + i theta + R zeta pi conj Z)
    Z: complex
    theta_E: float
    r_q: complex
    bound: float
    wedges: list
    eps: list
    remainders: list
    dlog: complex | None = None

    @property
    def value(self):
        return np.exp(self.log_value)

    @property
    def leading(self):
        return np.exp(self.leading_log)

    def to_dict(self):
        c = lambda v: [float(np.real(v)), float(np.imag(v))]
        return {"log_value": c(self.log_value), "leading_log": c(self.leading_log),
                "Z": c(self.Z), "theta_E": self.theta_E, "r_q": c(self.r_q), "bound": self.bound,
                "eps": [c(e) for e in self.eps], "remainders": list(self.remainders),
                "dlog": None if self.dlog is None else c(self.dlog)}


def _wrap(z):
    """Reduce the imaginary part to (-pi, pi]."""
    return complex(z.real, (z.imag + np.pi) % (2 * np.pi) - np.pi)


def leading_exponent(Z, theta, R, zeta):
    """log of -exp(R pi Z/zeta + i theta + R zeta pi conj Z)."""
    return 1j * np.pi + R * np.pi * Z / zeta + 1j * theta + R * zeta * np.pi * np.conj(Z)


def leading_log(model: HiggsLocalModel, quad_model: QuadrilateralModel, quad: Quadrature = DEFAULT_QUAD):
    """(log X^L, Z, theta) with X^L = -exp(R pi Z/zeta + i theta + R zeta pi conj Z)."""
    tight = Quadrature(1e-14, 1e-13, quad.max_subdivisions, quad.eps_tail)
    Z = period(model.q, quad_model.cycle, quad_model.cycle_branch, tight)
    I = integrate_contour(model.a1, quad_model.cycle, tight)
    ith = np.conj(I) - I
    R, zt = model.R, model.zeta
    lg = leading_exponent(Z, ith.imag, R, zt)
    return lg, Z, float(ith.imag)


def x_coordinate(model: HiggsLocalModel, quad_model: QuadrilateralModel,
                 grid: GridSpec = SECTION_GRID, quad: Quadrature = DEFAULT_QUAD,
                 derivative: bool = False, tol: float = 1e-14, rescale=None) -> XCoordinate:
    """X_E = -(s1^s2)(s3^s4)/((s4^s1)(s2^s3)) with Liouville transports, in log form.

    Also returns the leading exponential computed independently from the
    period integrals over gamma_E, and the measured r_q = X_E/X^L - 1.
    ``rescale`` optionally multiplies the four vertex sections by constants
    (the result must not change).
    """
    if abs(_wrap(1j * (model.theta - quad_model.theta))) > 1e-9:
        raise ValueError("model angle and quadrilateral angle differ")
    cons = quad_model.connectors
    sides = quad_model.sides
    # u-ranges: every section is needed at t = 0 and at its connector points
    need = {(k, v): [0.0] for k in range(4) for v in _SIDE_VERTS[k]}
    for v, con in enumerate(cons):
        need[(_PRIMARY[v], v)].append(con.tp_hit)
        need[(_TARGET[v], v)].append(con.tg_land)
    sec = {}
    for (k, v), ts in need.items():
        sg = quad_model.sigma(k, v)
        u_min = min(sg * t for t in ts) - 0.1
        sec[(k, v)] = small_flat_section(model, sides[k], sg, u_min, grid, quad, derivative, tol)
    if rescale is not None:
        for v in range(4):
            sec[(_PRIMARY[v], v)] = sec[(_PRIMARY[v], v)].rescaled(rescale[v])
    # primary sections are used as they are; the others come by transport
    full = {}
    eps = []
    for v in range(4):
        P, G = _PRIMARY[v], _TARGET[v]
        full[(P, v)] = sec[(P, v)]
        tr = transport_section(model, sec[(P, v)], cons[v], target=sec[(G, v)], grid=grid,
                               quad=quad, tol=tol)
        full[(G, v)] = tr
        eps.append(tr.eps)
    # wedges on their sides at t = 0: (s4^s1)(z1), (s1^s2)(z2), (s2^s3)(z3), (s3^s4)(z4)
    pairs = [(3, 0), (0, 1), (1, 2), (2, 3)]
    logw = []
    dlogw = []
    for k, (i, j) in enumerate(pairs):
        logw.append(wedge(full[(k, i)], full[(k, j)], 0.0, log=True))
        if derivative:
            dlogw.append(_dlog_wedge(full[(k, i)], full[(k, j)], 0.0))
    # Liouville transport of (s4^s1) from z1 to z2 through U_1, (s2^s3) from z3 to z4 through U_3
    def chain(v):
        con = cons[v]
        P, G = _PRIMARY[v], _TARGET[v]
        return [(sides[P], 0.0, con.tp_hit), (con.curve, con.t_hit, con.t_land),
                (sides[G], con.tg_land, 0.0)]
    e12 = liouville_exponent(model, chain(0))
    e34 = liouville_exponent(model, chain(2))
    lx = 1j * np.pi + logw[1] + logw[3] - (logw[0] + e12) - (logw[2] + e34)
    ll, Z, th = leading_log(model, quad_model, quad)
    d = _wrap(lx - ll)
    r_q = np.expm1(d)
    rem = [sec[key].remainder_sup() for key in sorted(sec)]
    b = []
    for k, (i, j) in enumerate(pairs):
        xr = full[(k, i)].remainder_sup()
        yr = full[(k, j)].remainder_sup()
        b.append(xr + yr + xr * yr)
    tb = [abs(e) for e in eps]
    num = np.prod([1 + x for x in b]) * np.prod([1 + x for x in tb])
    den = np.prod([max(1 - x, 1e-300) for x in b]) * np.prod([max(1 - x, 1e-300) for x in tb])
    bound = float(num / den - 1.0)
    dlog = None
    if derivative:
        dlog = dlogw[1] + dlogw[3] - dlogw[0] - dlogw[2]
    return XCoordinate(ll + d, ll, Z, th, complex(r_q), bound, logw, eps, rem, dlog)


def dlog_x(model: HiggsLocalModel, quad_model: QuadrilateralModel, h: float = 1e-4,
           grid: GridSpec = SECTION_GRID, quad: Quadrature = DEFAULT_QUAD):
    """d/d eps of log X_E two ways: (derivative solves, central difference)."""
    an = x_coordinate(model, quad_model, grid, quad, derivative=True).dlog
    xp = x_coordinate(model.with_(eps=model.eps + h), quad_model, grid, quad).log_value
    xm = x_coordinate(model.with_(eps=model.eps - h), quad_model, grid, quad).log_value
    return an, _wrap(xp - xm) / (2 * h)


def check_reality(model: HiggsLocalModel, quad_model: QuadrilateralModel,
                  grid: GridSpec = SECTION_GRID, quad: Quadrature = DEFAULT_QUAD) -> float:
    """|X^theta(zeta) - conj(X^{theta+pi}(-1/conj zeta))| / |X^theta(zeta)| for the charge gamma_E^theta.

    At theta + pi the quadrilateral is relabelled (sources become sinks) and its
    cycle is -gamma_E^theta, so the coordinate of gamma_E^theta there is 1/X_E.
    """
    x1 = x_coordinate(model, quad_model, grid, quad)
    x2 = x_coordinate(model.antipodal(), quad_model.antipodal(), grid, quad)
    d = _wrap(x1.log_value + np.conj(x2.log_value))
    return float(abs(np.expm1(d)))


def r_q_sweep(model: HiggsLocalModel, quad_model: QuadrilateralModel, Rs=(5, 10, 15, 20),
              grid: GridSpec = SECTION_GRID, quad: Quadrature = DEFAULT_QUAD):
    """(Rs, |r_q|, bounds, fitted slope of log|r_q| against R)."""
    vals, bounds = [], []
    for R in Rs:
        x = x_coordinate(model.with_(R=float(R)), quad_model, grid, quad)
        vals.append(abs(x.r_q))
        bounds.append(x.bound)
    slope = float(np.polyfit(np.asarray(Rs, float), np.log(vals), 1)[0])
    return list(Rs), vals, bounds, slope
