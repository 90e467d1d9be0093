"""Quadrature on half-lines and contours, modified Bessel K0/K1, Cauchy kernel."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

EULER_GAMMA = 0.57721566490153286061


class NumericalError(RuntimeError):
    """Base class for numerical failures (non-convergence, contraction loss, ...)."""


class QuadratureError(NumericalError):
    def __init__(self, msg, estimate=None, err=None):
        super().__init__(msg)
        self.estimate = estimate
        self.err = err


class PoleError(NumericalError, ZeroDivisionError):
    pass


class ProximityError(NumericalError):
    """Path comes too close to a declared singular point."""

    def __init__(self, msg, point=None, index=None):
        super().__init__(msg)
        self.point = point
        self.index = index


@dataclass(frozen=True)
class Quadrature:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    max_subdivisions: int = 200
    eps_tail: float = 1e-12

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")
        if not self.eps_tail > 0:
            raise ValueError("eps_tail must be positive")

    @classmethod
    def from_dict(cls, d: dict | None):
        d = dict(d or {})
        keys = ("abs_tol", "rel_tol", "max_subdivisions", "eps_tail")
        unknown = set(d) - set(keys)
        if unknown:
            raise ValueError(f"tolerances: unknown keys {sorted(unknown)}")
        return cls(**d)


DEFAULT_QUAD = Quadrature()


@dataclass(frozen=True)
class ContourPath:
    """Either a polyline (``nodes``) or a circle (``center``, ``radius``, ``orientation``)."""

    nodes: tuple = ()
    center: complex | None = None
    radius: float | None = None
    orientation: int = 1

    def __post_init__(self):
        if self.center is None:
            if len(self.nodes) < 2:
                raise ValueError("polyline needs at least 2 nodes")
            object.__setattr__(self, "nodes", tuple(complex(z) for z in self.nodes))
        else:
            if self.radius is None or not self.radius > 0:
                raise ValueError("circle radius must be positive")
            if self.orientation not in (1, -1):
                raise ValueError("orientation must be +1 or -1")

    @classmethod
    def polyline(cls, nodes):
        return cls(nodes=tuple(nodes))

    @classmethod
    def circle(cls, center, radius, orientation=1):
        return cls(center=complex(center), radius=float(radius), orientation=int(orientation))

    @property
    def is_circle(self):
        return self.center is not None

    def reversed(self):
        if self.is_circle:
            return ContourPath.circle(self.center, self.radius, -self.orientation)
        return ContourPath.polyline(self.nodes[::-1])

    def sample(self, n: int):
        """Points and derivatives dz/ds on a uniform parameter grid s in [0, 1]."""
        s = np.linspace(0.0, 1.0, n)
        if self.is_circle:
            ph = 2 * np.pi * self.orientation * s
            z = self.center + self.radius * np.exp(1j * ph)
            dz = 2j * np.pi * self.orientation * (z - self.center)
            return s, z, dz
        nodes = np.asarray(self.nodes)
        seg = len(nodes) - 1
        u = s * seg
        k = np.minimum(u.astype(int), seg - 1)
        frac = u - k
        z = nodes[k] + frac * (nodes[k + 1] - nodes[k])
        dz = seg * (nodes[k + 1] - nodes[k])
        return s, z, dz

    def min_distance(self, point: complex) -> float:
        if self.is_circle:
            return abs(abs(point - self.center) - self.radius)
        d = math.inf
        for a, b in zip(self.nodes[:-1], self.nodes[1:]):
            ab = b - a
            t = 0.0 if ab == 0 else min(1.0, max(0.0, ((point - a) * ab.conjugate()).real / abs(ab) ** 2))
            d = min(d, abs(a + t * ab - point))
        return d


def _quad_complex(g, a, b, quad: Quadrature, points=None):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(g, a, b, epsabs=quad.abs_tol, epsrel=quad.rel_tol,
                                      limit=quad.max_subdivisions, complex_func=True, points=points)
        except integrate.IntegrationWarning as w:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                val, err = integrate.quad(g, a, b, epsabs=quad.abs_tol, epsrel=quad.rel_tol,
                                          limit=quad.max_subdivisions, complex_func=True, points=points)
            raise QuadratureError(f"quadrature did not converge: {w}", val, abs(err)) from None
    if not np.isfinite(val):
        raise QuadratureError("non-finite integrand value", val, math.inf)
    return complex(val), float(abs(err))


def _tail_cutoff(f, t0, quad: Quadrature, scale=1.0):
    """(t0 + L, allowance): first doubling L with |f| below eps_tail * scale at t0 + L and
    t0 + 2L, and a bound on the discarded tail from the decay ratio of the two probes."""
    L = 1.0
    for _ in range(200):
        t = t0 + L
        a, b = abs(f(t)), abs(f(t + L))
        if not (np.isfinite(a) and np.isfinite(b)):
            raise QuadratureError(f"non-finite integrand at t={t}")
        if a < quad.eps_tail * scale and b < quad.eps_tail * scale:
            # dyadic blocks [t0 + 2^k L, t0 + 2^{k+1} L] shrink at least by r = 2b/a
            r = 2.0 * b / a if a > 0 else 0.0
            if r >= 1.0:
                raise QuadratureError("integrand decays too slowly for a tail estimate")
            return t, a * (L + 1.0) / (1.0 - r)
        L *= 2.0
    raise QuadratureError("integrand does not decay; no tail cutoff found")


def integrate_semi_infinite(f: Callable[[float], complex], t0: float = 0.0,
                            quad: Quadrature = DEFAULT_QUAD):
    """Integrate f over [t0, inf) after the change t = t0 + u/(1-u).

    The range is truncated where |f| drops below ``eps_tail`` relative to the
    magnitude near t0 (floored at 1). Returns (value, err) with the truncation
    allowance folded into ``err``.
    """
    scale = max(1.0, abs(f(t0)))
    if not np.isfinite(scale):
        raise QuadratureError(f"non-finite integrand at t0={t0}")
    tc, tail = _tail_cutoff(f, t0, quad, scale)
    uc = (tc - t0) / (1.0 + tc - t0)

    def g(u):
        w = 1.0 - u
        return f(t0 + u / w) / (w * w)

    val, err = _quad_complex(g, 0.0, uc, quad)
    return val, err + max(tail, quad.eps_tail)


def _continue_signs(vals: np.ndarray, start: complex):
    """Flip signs so that consecutive values of a two-valued function vary continuously."""
    out = np.array(vals, dtype=complex)
    prev = start
    worst = 0.0
    for k in range(len(out)):
        v = out[k]
        if abs(v - prev) > abs(-v - prev):
            v = -v
        worst = max(worst, abs(v - prev) / max(abs(v), 1e-300))
        out[k] = v
        prev = v
    return out, worst


def integrate_contour(f: Callable, path: ContourPath, quad: Quadrature = DEFAULT_QUAD,
                      singularities: Sequence[complex] = (), exclusion: float = 1e-8,
                      tracked: bool = False, branch: complex | None = None):
    """Contour integral of f along ``path``.

    With ``tracked=True``, f is treated as two-valued (defined up to sign) and is
    continued from ``branch`` at the start of the path.
    """
    for i, p in enumerate(singularities):
        if path.min_distance(p) < exclusion:
            raise ProximityError(f"path within {exclusion} of singular point {i} at {p}", p, i)
    if tracked:
        return _tracked_contour(f, path, quad, branch)
    if path.is_circle:
        c, r, o = path.center, path.radius, path.orientation

        def g(phi):
            z = c + r * np.exp(1j * o * phi)
            return f(z) * 1j * o * (z - c)

        return _quad_complex(g, 0.0, 2 * np.pi, quad)[0]
    total = 0j
    for a, b in zip(path.nodes[:-1], path.nodes[1:]):
        d = b - a
        total += _quad_complex(lambda s: f(a + s * d) * d, 0.0, 1.0, quad)[0]
    return total


def _tracked_contour(f, path, quad, branch):
    # dense Gauss-Legendre panels (trapezoid for circles), doubled until stable
    n = 64
    prev = None
    for _ in range(14):
        if path.is_circle:
            s, z, dz = path.sample(n + 1)
            v = np.array([f(zz) for zz in z], dtype=complex)
            start = branch if branch is not None else v[0]
            v, _ = _continue_signs(v, start)
            h = 1.0 / n
            val = h * np.sum((v * dz)[:-1])
        else:
            val = _tracked_polyline(f, path, n, branch)
        if prev is not None and abs(val - prev) <= max(quad.abs_tol, quad.rel_tol * abs(val)):
            return complex(val)
        prev = val
        n *= 2
    raise QuadratureError("tracked contour integral did not converge", prev)


def _tracked_polyline(f, path, panels, branch):
    xg, wg = np.polynomial.legendre.leggauss(8)
    nodes = path.nodes
    nseg = len(nodes) - 1
    per = max(1, panels // nseg)
    prev = branch
    total = 0j
    for a, b in zip(nodes[:-1], nodes[1:]):
        d = b - a
        edges = np.linspace(0.0, 1.0, per + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            s = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
            v = np.array([f(a + si * d) for si in s], dtype=complex)
            if prev is None:
                prev = v[0]
            v, _ = _continue_signs(v, prev)
            prev = v[-1]
            total += 0.5 * (hi - lo) * np.sum(wg * v) * d
    return total


def _k_series(order, x):
    # ascending series, converges fast for x < 1
    y = 0.25 * x * x
    lg = math.log(0.5 * x)
    term = 1.0
    if order == 0:
        i0 = 0.0
        acc = 0.0
        H = 0.0
        for k in range(60):
            if k > 0:
                term *= y / (k * k)
                H += 1.0 / k
            i0 += term
            acc += term * H
            if term < 1e-18 * i0:
                break
        return -(lg + EULER_GAMMA) * i0 + acc
    # order 1
    i1 = 0.0
    acc = 0.0
    term = 1.0  # (x^2/4)^k / (k! (k+1)!)
    psi1 = -EULER_GAMMA  # psi(k+1)
    psi2 = 1.0 - EULER_GAMMA  # psi(k+2)
    for k in range(60):
        if k > 0:
            term *= y / (k * (k + 1))
            psi1 += 1.0 / k
            psi2 += 1.0 / (k + 1)
        i1 += term
        acc += term * (psi1 + psi2)
        if term < 1e-18 * i1:
            break
    i1 *= 0.5 * x
    return 1.0 / x + lg * i1 - 0.25 * x * acc


def _k_cosh_quadrature(order, x):
    # e^{-x} * int_0^inf cosh(ny) e^{-x(cosh y - 1)} dy; trapezoid on the even,
    # strip-analytic integrand converges geometrically in the step size
    ymax = math.acosh(1.0 + 45.0 / x) + 1.0
    h = 0.05
    n = int(math.ceil(ymax / h))
    y = h * np.arange(n + 1)
    w = np.exp(-x * (np.cosh(y) - 1.0))
    if order == 1:
        w = w * np.cosh(y)
    return math.exp(-x) * h * (np.sum(w) - 0.5 * w[0])


def bessel_k(order: int, x: float) -> float:
    """Modified Bessel function of the second kind K_0 or K_1 for real x > 0."""
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    if not x > 0:
        raise ValueError(f"bessel_k requires x > 0, got {x}")
    if x < 1.0:
        return _k_series(order, x)
    return _k_cosh_quadrature(order, x)


def cauchy_kernel(zp: complex, z: complex) -> complex:
    """(1/zp) * (zp + z)/(zp - z)."""
    if zp == 0:
        raise PoleError("cauchy_kernel: zeta' = 0")
    if zp == z:
        raise PoleError("cauchy_kernel: zeta' = zeta")
    return (zp + z) / ((zp - z) * zp)


def cauchy_kernel_array(zp, z):
    zp = np.asarray(zp, dtype=complex)
    return (zp + z) / ((zp - z) * zp)
