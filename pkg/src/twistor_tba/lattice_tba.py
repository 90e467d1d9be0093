"""Charge lattice, semiflat coordinates, BPS rays and the Riemann-Hilbert (TBA) iteration.

Coordinates are stored without the global minus sign of the semiflat form,
X^sf_g = exp(R pi Z_g/zeta + i theta_g + R zeta pi conj(Z_g)), so that
g -> X_g is a homomorphism. The corrected coordinates solve

    X_g(zeta) = X^sf_g(zeta) exp[-(1/4 pi i) sum_b Omega(b) <g, b>
                 int_{l_b} (dz'/z') (z' + zeta)/(z' - zeta) log(1 - sigma(b) X_b(z'))]

with l_b = -Z_b R_+. On l_b we write z' = -(Z_b/|Z_b|) e^y, so dz'/z' = dy,
|X^sf_b| = exp(-2 pi R |Z_b| cosh y) and the Cauchy factor is coth((y - w)/2)
with zeta = -(Z_b/|Z_b|) e^w. Ray integrals use the trapezoid rule in y; the
pole of coth at y = w is removed by its exact trapezoid error term, which also
yields the one-sided limits on the ray.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import NumericalError, bessel_k


class DivergenceError(NumericalError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


class BranchError(NumericalError):
    """|sigma X_b| >= 1 somewhere on a ray: log(1 - sigma X_b) leaves its branch."""


class RayGuardError(ValueError):
    """zeta is on (or within the guard distance of) a BPS ray and no side was given."""


def _charge(g):
    return tuple(int(x) for x in g)


class ChargeLattice:
    """Integer lattice with an antisymmetric integer pairing on the generators."""

    def __init__(self, pairing, labels=None):
        P = np.asarray(pairing)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
            raise ValueError("pairing must be a square matrix of rank >= 1")
        if not np.all(P == np.round(P)):
            raise ValueError("pairing must be integer")
        P = np.round(P).astype(int)
        if not np.array_equal(P, -P.T):
            raise ValueError("pairing must be antisymmetric")
        self.pairing = P
        self.rank = P.shape[0]
        self.labels = list(labels) if labels is not None else [f"g{i + 1}" for i in range(self.rank)]

    def pair(self, a, b) -> int:
        return int(np.asarray(a, dtype=int) @ self.pairing @ np.asarray(b, dtype=int))

    def check(self, g):
        g = np.asarray(g)
        if g.shape != (self.rank,) or not np.all(g == np.round(g)):
            raise ValueError(f"charge {g!r} is not an integer vector of length {self.rank}")
        return _charge(g)


def sigma_extend(lattice: ChargeLattice, sigma_gen, g) -> int:
    """Quadratic refinement at g from its generator values.

    sigma(sum n_i e_i) = prod sigma_i^{n_i} (-1)^{sum_{i<j} n_i n_j <e_i, e_j>},
    the unique extension with sigma(0) = 1 and
    sigma(a) sigma(b) = sigma(a + b) (-1)^{<a, b>}.
    """
    n = np.asarray(lattice.check(g))
    s = np.asarray(sigma_gen, dtype=int)
    if s.shape != (lattice.rank,) or not np.all(np.abs(s) == 1):
        raise ValueError("generator refinement values must be +1 or -1")
    sign = int(np.prod(np.where(n % 2 == 1, s, 1)))
    P = lattice.pairing
    cross = sum(int(n[i] * n[j] * P[i, j]) for i in range(lattice.rank) for j in range(i + 1, lattice.rank))
    return sign * (-1 if cross % 2 else 1)


@dataclass
class SpectrumData:
    """Central charges, angles, refinement on generators and a finite BPS support."""
    lattice: ChargeLattice
    Z: np.ndarray  # per generator
    theta: np.ndarray  # per generator
    sigma: np.ndarray  # per generator, +-1
    omega: dict = field(default_factory=dict)  # charge tuple -> nonzero integer
    tail_bound: float = 0.0  # truncation bound reported for truncated towers

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=complex).reshape(-1)
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        self.sigma = np.asarray(self.sigma, dtype=int).reshape(-1)
        r = self.lattice.rank
        if not (len(self.Z) == len(self.theta) == len(self.sigma) == r):
            raise ValueError("Z, theta and sigma need one entry per generator")
        om = {}
        for g, k in self.omega.items():
            g = self.lattice.check(g)
            if int(k) != k:
                raise ValueError("Omega values must be integers")
            if not any(g):
                raise ValueError("the zero charge cannot carry Omega")
            if int(k) != 0:
                om[g] = int(k)
        self.omega = om
        for g in om:
            if self.Z_of(g) == 0:
                raise ValueError(f"charge {g} in the support has vanishing central charge")

    def Z_of(self, g) -> complex:
        return complex(np.dot(np.asarray(g, dtype=float), self.Z))

    def theta_of(self, g) -> float:
        return float(np.dot(np.asarray(g, dtype=float), self.theta))

    def sigma_of(self, g) -> int:
        return sigma_extend(self.lattice, self.sigma, g)

    @property
    def support(self):
        return sorted(self.omega)

    def with_(self, Z=None, theta=None):
        return SpectrumData(self.lattice, self.Z if Z is None else Z,
                            self.theta if theta is None else theta, self.sigma, dict(self.omega),
                            self.tail_bound)

    @classmethod
    def from_dict(cls, d):
        """{"rank", "pairing", "generators": [{"Z", "theta", "Omega", "sigma"}], "support": [...],
        "towers": [{"base", "step", "Omega", "m_max"}]}."""
        c = lambda v: complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v)
        gens = d["generators"]
        rank = int(d.get("rank", len(gens)))
        lat = ChargeLattice(d["pairing"], [g.get("label", f"g{i + 1}") for i, g in enumerate(gens)])
        if len(gens) != rank:
            raise ValueError("number of generators does not match rank")
        Z = [c(g["Z"]) for g in gens]
        th = [float(g.get("theta", 0.0)) for g in gens]
        sg = [int(g.get("sigma", 1)) for g in gens]
        omega = {}
        for i, g in enumerate(gens):
            k = int(g.get("Omega", 0))
            if k:
                e = [0] * rank
                e[i] = 1
                omega[tuple(e)] = k
        for s in d.get("support", []):
            ch = lat.check(s["charge"])
            omega[ch] = int(s["Omega"])
            if "sigma" in s and int(s["sigma"]) != sigma_extend(lat, sg, ch):
                raise ValueError(f"support entry {ch}: sigma inconsistent with the refinement identity")
        tail = 0.0
        for t in d.get("towers", []):
            base = np.asarray(lat.check(t["base"]))
            step = np.asarray(lat.check(t["step"]))
            m_max = int(t.get("m_max", 4))
            for m in range(m_max + 1):
                omega[_charge(base + m * step)] = int(t["Omega"])
            R = float(t.get("R", 1.0))
            zs = abs(complex(np.dot(step, Z)))
            tail = max(tail, math.exp(-(m_max + 1) * R * zs))
        return cls(lat, Z, th, sg, omega, tail)

    def to_dict(self):
        return {"rank": self.lattice.rank, "pairing": self.lattice.pairing.tolist(),
                "generators": [{"label": l, "Z": [z.real, z.imag], "theta": t, "sigma": int(s)}
                               for l, z, t, s in zip(self.lattice.labels, self.Z, self.theta, self.sigma)],
                "support": [{"charge": list(g), "Omega": k} for g, k in sorted(self.omega.items())]}


def x_semiflat(spectrum: SpectrumData, g, zeta, R: float, signed: bool = True):
    """Semiflat coordinate -exp(R pi Z/zeta + i theta + R zeta pi conj Z) (without the sign if not signed)."""
    zeta = np.asarray(zeta, dtype=complex)
    if np.any(zeta == 0):
        raise ValueError("zeta must be nonzero")
    Z = spectrum.Z_of(g)
    v = np.exp(R * np.pi * Z / zeta + 1j * spectrum.theta_of(g) + R * zeta * np.pi * np.conj(Z))
    return -v if signed else v


def _log_xsf(spectrum, g, zeta, R):
    Z = spectrum.Z_of(g)
    return R * np.pi * Z / zeta + 1j * spectrum.theta_of(g) + R * zeta * np.pi * np.conj(Z)


def jump_factor(spectrum: SpectrumData, ray_phase: float, g, x_values: dict, tol: float = 1e-9) -> complex:
    """S_l^g = prod over charges b with ray l_b = l of (1 - sigma(b) X_b)^{<g, b> Omega(b)}.

    ``ray_phase`` is arg of the ray l = -Z_b R_+; ``x_values`` maps each such
    charge to the (unsigned) X_b at the point of the ray.
    """
    out = 1.0 + 0j
    for b, k in spectrum.omega.items():
        ph = np.angle(-spectrum.Z_of(b))
        if abs(np.angle(np.exp(1j * (ph - ray_phase)))) > tol:
            continue
        e = spectrum.lattice.pair(g, b) * k
        if e == 0:
            continue
        x = spectrum.sigma_of(b) * complex(x_values[b])
        if abs(x) >= 1:
            raise BranchError(f"|X_{b}| >= 1 on its ray; increase R")
        out *= (1 - x) ** e
    return out


@dataclass(frozen=True)
class RayGrid:
    h: float = 0.05
    eps_tail: float = 1e-16

    def nodes(self, R, absZ):
        """Symmetric uniform nodes on [-Y, Y], Y = arccosh(log(1/eps)/(2 pi R |Z|)) + 1."""
        a = math.log(1.0 / self.eps_tail) / (2 * math.pi * R * absZ)
        Y = math.acosh(max(a, 1.0)) + 1.0
        K = int(math.ceil(Y / self.h))
        return self.h * np.arange(-K, K + 1)


@dataclass
class Ray:
    charge: tuple
    omega: int
    sigma: int
    Z: complex
    y: np.ndarray
    L: np.ndarray  # log(1 - sigma X_b) at the nodes

    @property
    def direction(self):
        return -self.Z / abs(self.Z)

    @property
    def phase(self):
        return float(np.angle(self.direction))

    def points(self):
        return self.direction * np.exp(self.y)

    def w(self, zeta):
        """Rapidity of zeta relative to this ray, Im w in (-pi, pi]."""
        return np.log(np.atleast_1d(np.asarray(zeta, dtype=complex)) / self.direction)


@dataclass
class RayFunctionTable:
    spectrum: SpectrumData
    R: float
    grid: RayGrid
    rays: list
    iterations: int = 0
    last_change: float = 0.0
    history: list = field(default_factory=list)
    guard: float = 1e-6
    _cache: dict = field(default_factory=dict, repr=False)

    def ray_of(self, b):
        for r in self.rays:
            if r.charge == tuple(b):
                return r
        raise KeyError(b)

    def to_rows(self):
        rows = []
        for i, r in enumerate(self.rays):
            for y, v in zip(r.y, r.L):
                rows.append((i, float(y), float(v.real), float(v.imag)))
        return rows

    # evaluation ------------------------------------------------------------

    def ray_integral(self, ray: Ray, zeta, side: int = 0, depth: int = 0):
        """int coth((y - w)/2) L(y) dy over the ray, with the pole term restored.

        ``side`` = +1/-1 selects the counterclockwise/clockwise limit when
        zeta lies on the ray (|Im w| below the guard).
        """
        zeta = np.atleast_1d(np.asarray(zeta, dtype=complex))
        w = ray.w(zeta)
        h = self.grid.h
        out = np.empty(zeta.shape, dtype=complex)
        on = np.abs(w.imag) < self.guard
        if np.any(on) and side == 0:
            raise RayGuardError(f"zeta within {self.guard:g} of the ray of {ray.charge}; pass a side")
        w = np.where(on, w.real + 0j, w)
        # nodes too close to a real w: average two nearby real points (smooth one-sided limit)
        ww = [w]
        near = on & (np.abs(np.remainder(w.real / h + 0.5, 1.0) - 0.5) < 1e-6)
        if np.any(near):
            ww = [np.where(near, w + 1e-3 * h, w), np.where(near, w - 1e-3 * h, w)]
        acc = np.zeros(zeta.shape, dtype=complex)
        for wv in ww:
            S = h * (np.tanh((ray.y[None, :] - wv[:, None]) / 2) ** -1 @ ray.L)
            x = np.pi * wv / h
            up = np.where(on, side > 0, wv.imag > 0)
            far = np.abs(wv.imag) > 7.0 * h  # pole term below 1e-19 relative
            corr = np.zeros(wv.shape, dtype=complex)
            idx = np.flatnonzero(~far)
            if len(idx):
                zk = ray.direction * np.exp(wv[idx])
                Lw = self._log1m(ray, zk, side, depth)
                with np.errstate(over="ignore"):
                    fu = 2j / (1 - np.exp(-2j * x[idx]))
                    fd = 2j / (np.exp(2j * x[idx]) - 1)
                corr[idx] = np.pi * 2 * Lw * np.where(up[idx], fu, fd)
            acc += S + corr
        return acc / len(ww)

    def _log1m(self, ray, zeta, side, depth):
        if depth > 3:
            raise NumericalError("rays too close together for the pole correction; reduce the ray step")
        lx = self.log_x(ray.charge, zeta, side=side, depth=depth + 1)
        x = ray.sigma * np.exp(lx)
        if np.any(np.abs(x) >= 1):
            raise BranchError(f"|X_{ray.charge}| >= 1 near its ray; increase R")
        return np.log1p(-x)

    def log_x(self, g, zeta, side: int = 0, depth: int = 0):
        """log X_g(zeta) (unsigned convention); vectorised in zeta."""
        g = self.spectrum.lattice.check(g)
        zeta = np.atleast_1d(np.asarray(zeta, dtype=complex))
        out = _log_xsf(self.spectrum, g, zeta, self.R)
        for ray in self.rays:
            e = self.spectrum.lattice.pair(g, ray.charge) * ray.omega
            if e == 0:
                continue
            out = out - e / (4j * np.pi) * self.ray_integral(ray, zeta, side, depth)
        return out

    def evaluate(self, g, zeta, side: int = 0, signed: bool = False):
        v = np.exp(self.log_x(g, zeta, side))
        return -v if signed else v

    def correction(self, g, zeta, side: int = 0):
        """log(X_g/X^sf_g) at zeta."""
        g = self.spectrum.lattice.check(g)
        zeta = np.atleast_1d(np.asarray(zeta, dtype=complex))
        return self.log_x(g, zeta, side) - _log_xsf(self.spectrum, g, zeta, self.R)

    def jump_residual(self, g, zeta0):
        """|X^+ S - X^-| / |X^-| at a point on one of the active rays."""
        zeta0 = complex(zeta0)
        ph = np.angle(zeta0)
        on = [r for r in self.rays if abs(np.angle(np.exp(1j * (r.phase - ph)))) < 1e-9]
        if not on:
            raise ValueError("zeta0 is not on an active ray")
        xp = np.exp(self.log_x(g, zeta0, side=+1))[0]
        xm = np.exp(self.log_x(g, zeta0, side=-1))[0]
        xv = {r.charge: np.exp(self.log_x(r.charge, zeta0, side=+1))[0] for r in on}
        S = jump_factor(self.spectrum, ph, g, xv)
        return float(abs(xp * S - xm) / abs(xm))

    def reality_residual(self, g, zeta):
        """|X_g(zeta) conj(X_g(-1/conj zeta)) - 1| (for spectra symmetric under b -> -b)."""
        zeta = complex(zeta)
        a = self.log_x(g, zeta)[0]
        b = self.log_x(g, -1.0 / np.conj(zeta))[0]
        return float(abs(np.expm1(a + np.conj(b))))


def _ray_values(table: RayFunctionTable, ray: Ray):
    lx = table.log_x(ray.charge, ray.points())
    x = ray.sigma * np.exp(lx)
    if np.any(np.abs(x) >= 1):
        raise BranchError(f"|sigma X_{ray.charge}| >= 1 on its ray; increase R")
    return np.log1p(-x)


def tba_solve(spectrum: SpectrumData, R: float, grid: RayGrid = RayGrid(), max_iter: int = 200,
              tol: float = 1e-13, init=None, guard: float = 1e-6) -> RayFunctionTable:
    """Fixed point of the ray equations by iteration from the semiflat tables.

    ``init`` optionally maps each support charge to a callable zeta -> X_b used
    for the starting tables. Raises DivergenceError if the sup-change fails to
    decrease for five consecutive iterations.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    rays = []
    for b in spectrum.support:
        Z = spectrum.Z_of(b)
        y = grid.nodes(R, abs(Z))
        ray = Ray(b, spectrum.omega[b], spectrum.sigma_of(b), Z, y, np.zeros(len(y), dtype=complex))
        pts = ray.points()
        x0 = init[b](pts) if init is not None else np.exp(_log_xsf(spectrum, b, pts, R))
        x0 = ray.sigma * np.asarray(x0, dtype=complex)
        if np.any(np.abs(x0) >= 1):
            raise BranchError(f"|X^sf_{b}| >= 1 on its ray; increase R")
        ray.L = np.log1p(-x0)
        rays.append(ray)
    for a, b in itertools.combinations(rays, 2):
        same = abs(np.angle(a.direction / b.direction)) < 1e-12
        if same and spectrum.lattice.pair(a.charge, b.charge) != 0:
            raise ValueError(f"mutually nonlocal charges {a.charge}, {b.charge} share a ray")
    table = RayFunctionTable(spectrum, R, grid, rays, guard=guard)
    rising = 0
    prev = math.inf
    for it in range(1, max_iter + 1):
        new = [_ray_values(table, r) for r in rays]
        change = max((float(np.max(np.abs(n - r.L))) for n, r in zip(new, rays)), default=0.0)
        for n, r in zip(new, rays):
            r.L = n
        table.iterations = it
        table.last_change = change
        table.history.append(change)
        if change < tol:
            return table
        rising = rising + 1 if change >= prev else 0
        if rising >= 5:
            raise DivergenceError("TBA iteration is not contracting; increase R", table.history)
        prev = change
    raise DivergenceError(f"no convergence after {max_iter} iterations", table.history)


def evaluate_x(table: RayFunctionTable, g, zeta, side: int = 0, signed: bool = False):
    """X_g(zeta) including instanton corrections; ``side`` = +1/-1 on a ray."""
    return table.evaluate(g, zeta, side, signed)


def kernel_constants(table: RayFunctionTable, g, zeta):
    """Per active ray: (a_b, b_b) with a_b = |<g,b> Omega| sup |coth((y - w)/2)| / (2 pi)
    and b_b = sup |X_b/X^sf_b| on the ray."""
    zeta = complex(zeta)
    out = {}
    for ray in table.rays:
        e = table.spectrum.lattice.pair(g, ray.charge) * ray.omega
        if e == 0:
            continue
        w = ray.w(zeta)[0]
        a = abs(e) * float(np.max(np.abs(1.0 / np.tanh((ray.y - w) / 2)))) / (2 * np.pi)
        pts = ray.points()
        xs = np.abs(-np.expm1(ray.L)) / np.abs(np.exp(_log_xsf(table.spectrum, ray.charge, pts, table.R)))
        out[ray.charge] = (a, float(np.max(xs)))
    return out


def correction_bound(table: RayFunctionTable, g, zeta, n_max: int = 50) -> float:
    """sum_b sum_n C_{b,n} (4 pi n R |Z_b|)^{-1/2} exp(-2 n pi R |Z_b|), C_{b,n} = a_b b_b^n sqrt(pi)/n.

    Uses |log(1 - x)| <= sum |x|^n/n and K_0(x) <= sqrt(pi/2x) e^{-x}.
    """
    total = 0.0
    for b, (a, bb) in kernel_constants(table, g, zeta).items():
        Zb = abs(table.spectrum.Z_of(b))
        for n in range(1, n_max + 1):
            x = 4 * np.pi * n * table.R * Zb
            total += a * bb ** n * math.sqrt(math.pi) / n * x ** -0.5 * math.exp(-2 * n * np.pi * table.R * Zb)
    return total


def bessel_estimate(table: RayFunctionTable, g, zeta) -> float:
    """sum_b a_b b_b K_0(2 pi R |Z_b|): leading size of the correction."""
    return sum(a * bb * bessel_k(0, 2 * np.pi * table.R * abs(table.spectrum.Z_of(b)))
               for b, (a, bb) in kernel_constants(table, g, zeta).items())


def measure_A(spectrum: SpectrumData, R: float, g, zetas, perturb: float = 0.01,
              grid: RayGrid = RayGrid()):
    """X_g/Y_g over zetas for two runs: from the semiflat tables and from tables scaled by 1 + perturb."""
    t1 = tba_solve(spectrum, R, grid)
    init = {b: (lambda b: lambda z: (1 + perturb) * np.exp(_log_xsf(spectrum, b, z, R)))(b)
            for b in spectrum.support}
    t2 = tba_solve(spectrum, R, grid, init=init)
    z = np.asarray(zetas, dtype=complex)
    return np.exp(t1.log_x(g, z) - t2.log_x(g, z))


def one_ray_spectrum(Ze=1j, Zm=1.0, theta=(0.0, 0.0), sigma=(1, 1), omega=1) -> SpectrumData:
    """Rank 2, <g_e, g_m> = 1, Omega(+-g_e) = omega only."""
    lat = ChargeLattice([[0, 1], [-1, 0]], ["e", "m"])
    return SpectrumData(lat, [Ze, Zm], list(theta), list(sigma), {(1, 0): omega, (-1, 0): omega})


def two_ray_spectrum(Ze=1j, Zm=1.0, theta=(0.0, 0.0), sigma=(1, 1)) -> SpectrumData:
    """Rank 2 with Omega = 1 on +-g_e and +-g_m (mutually nonlocal rays)."""
    lat = ChargeLattice([[0, 1], [-1, 0]], ["e", "m"])
    return SpectrumData(lat, [Ze, Zm], list(theta), list(sigma),
                        {(1, 0): 1, (-1, 0): 1, (0, 1): 1, (0, -1): 1})
