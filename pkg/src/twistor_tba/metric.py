"""Holomorphic symplectic form from d log X over a moduli patch, and the metric at zeta = -1.

Real coordinates on a patch are x = (Re u_1..r, Im u_1..r, theta_1..n) with
n the lattice rank. With A_ik = d log X_i / dx_k,

    varpi(zeta) = (1/8 pi^2 R) sum_ij eps_ij d log X_i ^ d log X_j  ->  (1/4 pi^2 R) A^T eps A,

eps_ij being the inverse of the lattice pairing. The zeta dependence is
varpi = zeta^{-1} A_- + omega_I + zeta A_+, which is solved from three samples.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lattice_tba import (DivergenceError, RayGrid, SpectrumData, BranchError, tba_solve)
from .numerics import NumericalError, bessel_k


class RayCrossingError(NumericalError):
    """A finite-difference displacement moves a BPS ray across the sample zeta."""


@dataclass
class TwoForm:
    """Antisymmetric matrix over the real coordinate basis (upper triangle is authoritative)."""
    matrix: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        M = np.asarray(self.matrix)
        U = np.triu(M, 1)
        self.matrix = U - U.T

    def __call__(self, v, w):
        return np.asarray(v) @ self.matrix @ np.asarray(w)

    def __add__(self, other):
        return TwoForm(self.matrix + other.matrix, self.labels)

    def __sub__(self, other):
        return TwoForm(self.matrix - other.matrix, self.labels)

    @property
    def real(self):
        return TwoForm(self.matrix.real, self.labels)


@dataclass
class ModuliPatch:
    """Base coordinates u in C^r, central charges Z(u) for the lattice generators, fiber angles.

    ``Z`` maps a length-r complex array to the generator central charges.
    ``spectrum`` supplies the lattice, Omega and sigma; its Z and theta are
    replaced at every evaluated point.
    """
    Z: Callable
    r: int
    spectrum: SpectrumData
    R: float = 1.0
    dZ: Callable | None = None  # optional analytic Jacobian u -> (rank, r)

    def __post_init__(self):
        P = self.spectrum.lattice.pairing.astype(float)
        if abs(np.linalg.det(P)) < 1e-12:
            raise ValueError("lattice pairing must be nondegenerate on a moduli patch")
        self.eps_upper = P
        self.eps_lower = np.linalg.inv(P)
        if not np.allclose(self.eps_lower @ self.eps_upper, np.eye(len(P)), atol=1e-12):
            raise ValueError("pairing inverse check failed")

    @property
    def rank(self):
        return self.spectrum.lattice.rank

    @property
    def dim(self):
        return 2 * self.r + self.rank

    @property
    def labels(self):
        return ([f"Re u{a + 1}" for a in range(self.r)] + [f"Im u{a + 1}" for a in range(self.r)]
                + [f"theta_{l}" for l in self.spectrum.lattice.labels])

    def split(self, x):
        x = np.asarray(x, dtype=float)
        return x[:self.r] + 1j * x[self.r:2 * self.r], x[2 * self.r:]

    def jacobian(self, u, h: float = 1e-5):
        """dZ_i/du_a (holomorphic), analytic when given, else central differences."""
        u = np.asarray(u, dtype=complex)
        if self.dZ is not None:
            return np.asarray(self.dZ(u), dtype=complex).reshape(self.rank, self.r)
        J = np.empty((self.rank, self.r), dtype=complex)
        for a in range(self.r):
            e = np.zeros(self.r, dtype=complex)
            e[a] = h * max(1.0, abs(u[a]))
            J[:, a] = (np.asarray(self.Z(u + e)) - np.asarray(self.Z(u - e))) / (2 * e[a])
        return J

    def lagrangian_residual(self, u):
        """Antisymmetric part of J^T eps J; zero when sum eps_ij dZ_i ^ dZ_j = 0."""
        J = self.jacobian(u)
        M = J.T @ self.eps_lower @ J
        return float(np.max(np.abs(M - M.T))) if self.r > 1 else 0.0

    def spectrum_at(self, x, R=None):
        u, th = self.split(x)
        return self.spectrum.with_(Z=np.asarray(self.Z(u), dtype=complex), theta=th)

    @classmethod
    def from_dict(cls, d, spectrum: SpectrumData):
        """Affine patch {"r", "Z0": [[re, im], ...], "dZ": [[[re, im], ...], ...], "R"}."""
        c = lambda v: complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v)
        r = int(d.get("r", 1))
        Z0 = np.array([c(z) for z in d["Z0"]], dtype=complex)
        A = np.array([[c(v) for v in row] for row in d["dZ"]], dtype=complex).reshape(len(Z0), r)
        return cls(lambda u: Z0 + A @ np.asarray(u, dtype=complex), r, spectrum, float(d.get("R", 1.0)),
                   lambda u: A)


def _wrap(z):
    return z.real + 1j * ((z.imag + np.pi) % (2 * np.pi) - np.pi)


def _ray_sides(sp: SpectrumData, zetas):
    """Signed angle of each zeta relative to each active ray."""
    out = []
    for b in sp.support:
        d = -sp.Z_of(b) / abs(sp.Z_of(b))
        out.append(np.angle(np.asarray(zetas) / d))
    return np.array(out)


def dlog_x(patch: ModuliPatch, x, zetas, h: float = 1e-4, grid: RayGrid = RayGrid(),
           corrected: bool = True, R: float | None = None):
    """A[z, i, k] = d log X_i(zeta_z) / dx_k by central differences with one Richardson step."""
    R = patch.R if R is None else R
    x = np.asarray(x, dtype=float)
    zetas = np.atleast_1d(np.asarray(zetas, dtype=complex))
    n = patch.rank
    gens = [tuple(int(i == j) for j in range(n)) for i in range(n)]
    base = _ray_sides(patch.spectrum_at(x), zetas)
    guard = 1e-6

    def logs(xx):
        sp = patch.spectrum_at(xx)
        sides = _ray_sides(sp, zetas)
        if np.any(np.sign(sides) != np.sign(base)) or np.any(np.abs(sides) < guard):
            raise RayCrossingError("a displacement moves a BPS ray across zeta; use a smaller h or another zeta")
        if corrected:
            T = tba_solve(sp, R, grid)
            return np.array([T.log_x(g, zetas) for g in gens])  # (n, nz)
        from .lattice_tba import _log_xsf
        return np.array([_log_xsf(sp, g, zetas, R) for g in gens])

    scale = np.maximum(1.0, np.abs(x))
    A = np.empty((len(zetas), n, len(x)), dtype=complex)
    for k in range(len(x)):
        D = []
        for hh in (h, h / 2):
            e = np.zeros(len(x))
            e[k] = hh * scale[k]
            D.append(_wrap(logs(x + e) - logs(x - e)) / (2 * e[k]))
        A[:, :, k] = ((4 * D[1] - D[0]) / 3).T
    return A


def _assemble(patch, A, R):
    E = patch.eps_lower
    return [TwoForm(Az.T @ E @ Az / (4 * np.pi ** 2 * R), patch.labels) for Az in A]


def varpi(patch: ModuliPatch, x, zeta, h: float = 1e-4, grid: RayGrid = RayGrid(),
          corrected: bool = True, R: float | None = None):
    """varpi at one or several zeta (list of TwoForm for array input)."""
    R = patch.R if R is None else R
    scalar = np.ndim(zeta) == 0
    forms = _assemble(patch, dlog_x(patch, x, zeta, h, grid, corrected, R), R)
    return forms[0] if scalar else forms


def varpi_semiflat(patch: ModuliPatch, x, zeta, R: float | None = None):
    """Closed form (1/8 pi^2 R) sum eps_ij dlog X^L_i ^ dlog X^L_j with
    dlog X^L = (R pi/zeta) dZ + i dtheta + R pi zeta dZbar."""
    R = patch.R if R is None else R
    u, _ = patch.split(x)
    J = patch.jacobian(u)
    n, r = patch.rank, patch.r
    dZ = np.concatenate([J, 1j * J, np.zeros((n, n))], axis=1)
    dZb = np.conj(dZ)
    dth = np.concatenate([np.zeros((n, 2 * r)), np.eye(n)], axis=1)
    A = (R * np.pi / zeta) * dZ + 1j * dth + R * np.pi * zeta * dZb
    return _assemble(patch, A[None], R)[0]


def semiflat_omega_I(patch: ModuliPatch, x, R: float | None = None) -> TwoForm:
    """omega_I = sum eps_ij [(R/4) dZ_i ^ dZbar_j - (1/8 pi^2 R) dtheta_i ^ dtheta_j]."""
    R = patch.R if R is None else R
    u, _ = patch.split(x)
    J = patch.jacobian(u)
    n, r = patch.rank, patch.r
    dZ = np.concatenate([J, 1j * J, np.zeros((n, n))], axis=1)
    dth = np.concatenate([np.zeros((n, 2 * r)), np.eye(n)], axis=1)
    E = patch.eps_lower
    wedge = lambda a, b: a.T @ E @ b - b.T @ E.T @ a
    om = (R / 4) * wedge(dZ, np.conj(dZ)) - wedge(dth, dth) / (8 * np.pi ** 2 * R)
    return TwoForm(om.real, patch.labels)


def semiflat_metric(patch: ModuliPatch, x, R: float | None = None):
    """(g_sf, omega_I^sf); g_sf needs a nondegenerate patch point."""
    R = patch.R if R is None else R
    omI = semiflat_omega_I(patch, x, R)
    forms = [varpi_semiflat(patch, x, z, R) for z in (-1.0, 1.0, 1j)]
    g, _, _, _, _ = _metric_from(forms, patch, x, R, omI.matrix)
    return g, omI


@dataclass
class MetricResult:
    g: np.ndarray
    omega_I: TwoForm
    omega_J: TwoForm
    omega_K: TwoForm
    I: np.ndarray
    asymmetry: float
    omega_I_cross: float  # |Re varpi(-1) - omega_I from the linear solve|
    decomposition_residual: float  # fourth-sample check
    I_squared_residual: float


def decompose(forms, zetas=(-1.0, 1.0, 1j)):
    """(A_-, omega_I, A_+) with varpi(zeta) = A_-/zeta + omega_I + zeta A_+ from three samples."""
    z = np.asarray(zetas, dtype=complex)
    V = np.stack([1 / z, np.ones(3), z], axis=1)
    W = np.stack([f.matrix for f in forms])
    coef = np.linalg.solve(V, W.reshape(3, -1)).reshape(W.shape)
    return coef[0], coef[1], coef[2]


def _complex_structures(forms):
    Am, B, Ap = decompose(forms)
    w_plus = 2j * Am  # varpi = -(i/2 zeta) omega_+ + omega_I - (i/2) zeta omega_-
    w_minus = 2j * Ap
    wJ = (w_plus + w_minus) / 2
    wK = (w_plus - w_minus) / 2j
    return Am, B, Ap, wJ, wK


def _raw_I(wJ, wK):
    if np.linalg.cond(wJ.real) > 1e12:
        raise NumericalError("omega_J is singular at this patch point")
    return -np.linalg.solve(wJ.real, wK.real)


def _calibration_sign(patch, x, R):
    """+-1 so that I acts as multiplication by i on the base directions of the semiflat patch."""
    forms = [varpi_semiflat(patch, x, z, R) for z in (-1.0, 1.0, 1j)]
    _, _, _, wJ, wK = _complex_structures(forms)
    I = _raw_I(wJ, wK)
    r = patch.r
    Jb = np.block([[np.zeros((r, r)), -np.eye(r)], [np.eye(r), np.zeros((r, r))]])
    s = np.trace(Jb.T @ I[:2 * r, :2 * r])
    return 1.0 if s >= 0 else -1.0


def _metric_from(forms, patch, x, R, omega_I_direct=None):
    Am, B, Ap, wJ, wK = _complex_structures(forms)
    I = _calibration_sign(patch, x, R) * _raw_I(wJ, wK)
    omI = B.real if omega_I_direct is None else omega_I_direct
    G = omI @ I
    Gs = 0.5 * (G + G.T)
    asym = float(np.linalg.norm(G - G.T) / max(np.linalg.norm(G), 1e-300))
    return Gs, I, asym, wJ, wK


def extract_metric(patch: ModuliPatch, x, h: float = 1e-4, grid: RayGrid = RayGrid(),
                   corrected: bool = True, R: float | None = None, check_zeta=0.5 + 0.7j) -> MetricResult:
    """g(v, w) = omega_I(v, I w) with omega_I = Re varpi(-1) and I = -(omega_J)^{-1} omega_K."""
    R = patch.R if R is None else R
    zs = [-1.0, 1.0, 1j, check_zeta]
    forms = varpi(patch, x, np.array(zs), h, grid, corrected, R)
    omI = forms[0].matrix.real
    Gs, I, asym, wJ, wK = _metric_from(forms[:3], patch, x, R, omI)
    Am, B, Ap = decompose(forms[:3])
    pred = Am / check_zeta + B + check_zeta * Ap
    scale = max(np.linalg.norm(forms[3].matrix), 1e-300)
    return MetricResult(Gs, TwoForm(omI, patch.labels), TwoForm(wJ.real, patch.labels),
                        TwoForm(wK.real, patch.labels), I, asym,
                        float(np.linalg.norm(B.real - omI) / max(np.linalg.norm(omI), 1e-300)),
                        float(np.linalg.norm(pred - forms[3].matrix) / scale),
                        float(np.linalg.norm(I @ I + np.eye(len(I)))))


@dataclass
class DecaySweep:
    Rs: list
    diffs: list
    envelope: list
    C: float
    spread: float  # max/min of diff/envelope
    slope: float | None
    target: float
    relative_error: float | None
    skipped: list
    flag: str = ""


def decay_sweep(patch: ModuliPatch, x, Rs, h: float = 1e-4, grid: RayGrid = RayGrid(),
                fd_tol: float = 1e-8) -> DecaySweep:
    """Frobenius ||g_twist - g_sf|| per R, slope of its log against R, and the
    single constant C with diff <= C (K_0 + K_1)(2 pi R |Z_min|)."""
    sp = patch.spectrum_at(x)
    zmin = min((abs(sp.Z_of(b)) for b in sp.support), default=0.0)
    out_R, diffs, env, skipped, scales = [], [], [], [], []
    for R in Rs:
        try:
            g = extract_metric(patch, x, h, grid, True, R).g
        except (DivergenceError, BranchError) as e:
            warnings.warn(f"R={R} skipped: {e}")
            skipped.append(R)
            continue
        gsf, _ = semiflat_metric(patch, x, R)
        out_R.append(float(R))
        diffs.append(float(np.linalg.norm(g - gsf)))
        scales.append(float(np.linalg.norm(gsf)))
        env.append(float(bessel_k(0, 2 * np.pi * R * zmin) + bessel_k(1, 2 * np.pi * R * zmin)) if zmin > 0 else 0.0)
    target = -2 * np.pi * zmin
    slope = rel = None
    flag = ""
    if not sp.support or all(d < fd_tol * s for d, s in zip(diffs, scales)):
        flag = "differences at finite-difference level; slope undefined"
    elif len(diffs) < 2:
        flag = "fewer than two converged R values"
    else:
        slope = float(np.polyfit(out_R, np.log(diffs), 1)[0])
        rel = abs(slope - target) / abs(target) if target else None
    ratios = [d / e for d, e in zip(diffs, env) if e > 0]
    C = max(ratios) if ratios else 0.0
    spread = max(ratios) / min(ratios) if ratios and min(ratios) > 0 else math.inf
    return DecaySweep(out_R, diffs, env, C, spread, slope, target, rel, skipped, flag)
