"""Linear Volterra equations of the second kind with initial values at infinity.

    x(t) = a(t) - int_t^inf K(t, s) x(s) ds,      K(t, s) = A(t, s) B(s)

Discretised by a Nystrom scheme on Gauss-Legendre panels and solved by
Picard iteration. Kernels and forcing terms must broadcast over numpy arrays:
``a(t)`` returns shape t.shape + (n,), ``A(t, s)`` and ``B(s)`` return
(..., n, n).

Exponential product kernels A(t, s) = diag(exp(phi(t) - phi(s))) with Re phi
non-decreasing are handled by product integration (pass ``phase=phi`` instead
of ``A``): the exponential is integrated exactly against the panel
interpolant of B x, so panels need not resolve the decay scale 1/|phi'|.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import legendre as L

from .numerics import DEFAULT_QUAD, NumericalError, Quadrature


class ContractionError(NumericalError):
    def __init__(self, msg, lam):
        super().__init__(msg)
        self.lam = lam


class PicardError(NumericalError):
    def __init__(self, msg, last_diff):
        super().__init__(msg)
        self.last_diff = last_diff


def _phase_matrix(phase, t, s):
    d = np.asarray(phase(t), dtype=complex) - np.asarray(phase(s), dtype=complex)
    out = np.zeros(d.shape + (d.shape[-1],), dtype=complex)
    idx = np.arange(d.shape[-1])
    out[..., idx, idx] = np.exp(np.minimum(d.real, 700.0) + 1j * d.imag)
    return out


@dataclass
class IvpAtInfinity:
    T: float
    a: Callable
    A: Callable | None
    B: Callable
    n: int = 1
    a_inf: np.ndarray | None = None
    alpha: float | None = None  # uniform bound on |A|, estimated when None
    phase: Callable | None = None  # A = diag(exp(phase(t) - phase(s))) when given

    def __post_init__(self):
        if self.A is None and self.phase is None:
            raise ValueError("either A or phase is required")

    def kernel(self, t, s):
        if self.phase is not None:
            return _phase_matrix(self.phase, t, s) @ self.B(s)
        return self.A(t, s) @ self.B(s)


@dataclass(frozen=True)
class GridSpec:
    order: int = 8
    h_min: float = 0.05
    h_max: float = 0.5
    growth: float = 1.5
    T_max: float | None = None
    tail_growth: float = 1.0  # >1 widens panels geometrically past the bulk
    bulk: float | None = None


@dataclass
class GridSolution:
    grid: np.ndarray  # all output nodes (panel edges and Gauss nodes), increasing
    values: np.ndarray  # (len(grid), n)
    tail: np.ndarray  # value used beyond T_max
    err: float
    edges: np.ndarray = field(repr=False, default=None)
    order: int = 8
    lam: float = 0.0
    iterations: int = 0
    history: list = field(default_factory=list, repr=False)

    @property
    def T(self):
        return self.grid[0]

    @property
    def T_max(self):
        return self.grid[-1]

    def sup_norm(self):
        return float(np.max(np.linalg.norm(self.values, axis=-1)))

    def __call__(self, t):
        """Panel-wise polynomial interpolation (constant tail beyond T_max)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty(t.shape + (self.values.shape[1],), dtype=self.values.dtype)
        m = self.order + 2  # nodes per panel incl. both edges
        npan = len(self.edges) - 1
        for idx, tt in np.ndenumerate(t):
            if tt >= self.grid[-1]:
                out[idx] = self.tail if tt > self.grid[-1] else self.values[-1]
                continue
            k = min(max(int(np.searchsorted(self.edges, tt, side="right")) - 1, 0), npan - 1)
            sl = slice(k * (m - 1), k * (m - 1) + m)
            out[idx] = _bary(self.grid[sl], self.values[sl], tt)
        return out


def _bary(xs, ys, x):
    d = x - xs
    hit = np.flatnonzero(d == 0)
    if len(hit):
        return ys[hit[0]]
    w = np.array([1.0 / np.prod(xs[j] - np.delete(xs, j)) for j in range(len(xs))])
    c = w / d
    return (c[:, None] * ys).sum(0) / c.sum()


@lru_cache(maxsize=16)
def _reference(p):
    """Gauss nodes/weights on [-1,1] and partial weights W[i,j] = int_{x_i}^1 l_j."""
    x, w = L.leggauss(p)
    C = np.linalg.inv(L.legvander(x, p - 1))
    W = np.empty((p, p))
    for j in range(p):
        anti = L.legint(C[:, j])
        W[:, j] = L.legval(1.0, anti) - L.legval(x, anti)
    return x, w, W


def _edges(T, T_max, spec: GridSpec):
    e = [T]
    h = spec.h_min
    bulk = spec.bulk if spec.bulk is not None else T_max
    while e[-1] < T_max - 1e-12:
        if e[-1] >= bulk:
            h *= spec.tail_growth
        e.append(min(e[-1] + h, T_max))
        h = min(h * spec.growth, spec.h_max) if e[-1] < bulk else h
    if len(e) >= 3 and e[-1] - e[-2] < 0.25 * (e[-2] - e[-3]):
        e.pop(-2)
    return np.array(e)


class _Panels:
    def __init__(self, edges, p):
        self.edges = edges
        self.p = p
        x, w, W = _reference(p)
        lo, hi = edges[:-1], edges[1:]
        half = 0.5 * (hi - lo)
        self.s = (lo[:, None] + half[:, None] * (x[None, :] + 1)).ravel()
        self.w = (half[:, None] * w[None, :]).ravel()
        self.npan = len(lo)
        N = self.npan * p
        # M[i, j]: weight of node j in int_{s_i}^{end}
        M = np.zeros((N, N))
        for k in range(self.npan):
            rows = slice(k * p, (k + 1) * p)
            M[rows, k * p:(k + 1) * p] = half[k] * W
            M[rows, (k + 1) * p:] = self.w[(k + 1) * p:][None, :]
        self.M = M
        # edge rows: int_{edge_k}^{end} uses full panels k..end
        E = np.zeros((self.npan + 1, N))
        for k in range(self.npan):
            E[k, k * p:] = self.w[k * p:]
        self.E = E

    def exp_weights(self, phase, n):
        """Per-component product weights for A = diag(exp(phi(t) - phi(s))).

        Returns (Ms, Es) of shapes (n, N, N) and (n, npan + 1, N).
        """
        p, npan, N = self.p, self.npan, len(self.s)
        lo, hi = self.edges[:-1], self.edges[1:]
        ph_s = _vec(phase, self.s, n)
        ph_e = _vec(phase, self.edges, n)
        F0 = np.empty((n, npan, p), dtype=complex)
        Ms = np.zeros((n, N, N), dtype=complex)
        plans = [_exp_plan(lo[k], hi[k], p, n, ph_e[k], ph_s[k * p:(k + 1) * p], ph_e[k + 1])
                 for k in range(npan)]
        pts = [pl[0] for _, plan in plans for pl in plan]
        vals = _vec(phase, np.concatenate(pts), n)
        cuts = np.cumsum([len(x) for x in pts])[:-1]
        chunks = iter(np.split(np.arange(len(vals)), cuts))
        for k, (ph_sig, plan) in enumerate(plans):
            ph_sub = [vals[next(chunks), a] for a in range(n)]
            F = _exp_finish(lo[k], hi[k], p, n, ph_sig, plan, ph_sub)
            F0[:, k] = F[:, 0]
            Ms[:, k * p:(k + 1) * p, k * p:(k + 1) * p] = F[:, 1:]
        panel_of = np.repeat(np.arange(npan), p)
        later = panel_of[:, None] < np.arange(npan)[None, :]
        for a in range(n):
            ex = ph_s[:, a][:, None] - ph_e[:-1, a][None, :]
            G = np.where(later, np.exp(np.where(later, ex, -np.inf)), 0.0)
            off = (G[:, :, None] * F0[a][None, :, :]).reshape(N, N)
            Ms[a] += np.where(np.repeat(later, p, axis=1), off, 0.0)
        Es = np.zeros((n, npan + 1, N), dtype=complex)
        le = np.arange(npan + 1)[:, None] <= np.arange(npan)[None, :]
        for a in range(n):
            ex = ph_e[:, a][:, None] - ph_e[:-1, a][None, :]
            G = np.where(le, np.exp(np.where(le, ex, -np.inf)), 0.0)
            Es[a] = (G[:, :, None] * F0[a][None, :, :]).reshape(npan + 1, N)
        return Ms, Es

    def output_grid(self):
        p = self.p
        pts = []
        for k in range(self.npan):
            pts.append([self.edges[k]])
            pts.append(self.s[k * p:(k + 1) * p])
        pts.append([self.edges[-1]])
        return np.concatenate(pts)


_SUB_X, _SUB_W = L.leggauss(16)


def _lagrange_ref(p, x):
    """Values of the Lagrange basis on the p Gauss nodes at reference points x."""
    xg = _reference(p)[0]
    d = x[:, None] - xg[None, :]
    V = np.empty((len(x), p))
    for j in range(p):
        others = np.delete(np.arange(p), j)
        V[:, j] = np.prod(d[:, others], axis=1) / np.prod(xg[j] - xg[others])
    return V


def _exp_plan(lo, hi, p, n, ph_lo, ph_nodes, ph_hi):
    """Sub-quadrature points for F[a, r, j] = int_{sigma_r}^{hi} exp(phi_a(sigma_r) - phi_a(s)) l_j(s) ds.

    sigma_0 = lo and sigma_r (r >= 1) are the Gauss nodes of the panel. Per
    component the range is cut into pieces of length ~2/|phi'| and truncated
    once the real part of the exponent has dropped by 45. Returns one
    (s, w, r) triple per component.
    """
    xg = _reference(p)[0]
    width = hi - lo
    sig = np.concatenate([[lo], lo + 0.5 * width * (xg + 1)])
    ph_sig = np.concatenate([ph_lo[None, :], ph_nodes], axis=0)  # (p+1, n)
    tt = np.concatenate([sig, [hi]])
    dts = np.maximum(np.diff(tt), 1e-300)[:, None]
    dph = np.diff(np.concatenate([ph_sig, ph_hi[None, :]], axis=0), axis=0) / dts
    plan = []
    for a in range(n):
        rate = float(np.max(np.abs(dph[:, a])))
        re_rate = float(np.min(dph[:, a].real))
        ell = width if rate * width <= 2.0 else 2.0 / rate
        S, Wt, R = [], [], []
        for r in range(p + 1):
            D = hi - sig[r]
            if D <= 0:
                continue
            K = max(1, int(math.ceil(D / ell - 1e-12)))
            piece = D / K
            if re_rate > 0:
                K = min(K, int(math.ceil(45.0 / (re_rate * piece))) + 1)
            k = np.arange(K)
            S.append((sig[r] + piece * (k[:, None] + 0.5 * (_SUB_X[None, :] + 1))).ravel())
            Wt.append(np.tile(0.5 * piece * _SUB_W, K))
            R.append(np.full(K * len(_SUB_X), r))
        plan.append((np.concatenate(S), np.concatenate(Wt), np.concatenate(R)))
    return ph_sig, plan


def _exp_finish(lo, hi, p, n, ph_sig, plan, ph_sub):
    """Accumulate the planned sub-quadratures given phase values ph_sub[a] at their points."""
    width = hi - lo
    F = np.zeros((n, p + 1, p), dtype=complex)
    for a, (s, w, rr) in enumerate(plan):
        ex = ph_sig[rr, a] - ph_sub[a]
        if np.any(ex.real > 1e-8 * (1.0 + np.abs(ph_sig[rr, a].real))):
            raise ValueError("phase must have non-decreasing real part")
        e = w * np.exp(np.minimum(ex.real, 0.0) + 1j * ex.imag)
        V = _lagrange_ref(p, 2.0 * (s - lo) / width - 1.0)
        np.add.at(F[a], rr, e[:, None] * V)
    return F


def _kernel_blocks(K, t, s, n):
    Kts = np.asarray(K(t[:, None], s[None, :]))
    return Kts.reshape(len(t), len(s), n, n)


def _opnorm(Kb):
    if Kb.shape[-1] == 1:
        return np.abs(Kb[..., 0, 0])
    return np.linalg.norm(Kb, ord=2, axis=(-2, -1))


def _assemble(Kb, M):
    """Dense (N n) x (N n) operator from kernel blocks and weights."""
    N, _, n, _ = Kb.shape
    op = M[:, :, None, None] * Kb
    return op.transpose(0, 2, 1, 3).reshape(N * n, N * n)


def _tail_cut(problem: IvpAtInfinity, quad: Quadrature):
    """T_max with alpha * int_{T_max}^inf |B| < eps_tail.

    |B| is sampled on a doubling window; the part beyond the window is
    estimated from the exponential decay rate over its last quarter.
    """
    alpha = _alpha(problem)
    if alpha == 0:
        return problem.T + 1.0
    n = problem.n
    L = 1.0
    while L <= 1e4:
        s = problem.T + np.linspace(0.0, L, int(64 * L) + 1)
        nb = _opnorm(np.asarray(problem.B(s)).reshape(len(s), 1, n, n))[:, 0]
        if not np.all(np.isfinite(nb)):
            raise NumericalError("non-finite kernel values in the tail")
        k = 3 * (len(s) - 1) // 4
        if nb[-1] == 0:
            rem = 0.0
        elif nb[k] > nb[-1]:
            rem = nb[-1] * (s[-1] - s[k]) / math.log(nb[k] / nb[-1])
        else:
            rem = math.inf
        if alpha * rem < 0.1 * quad.eps_tail:
            seg = 0.5 * (nb[1:] + nb[:-1]) * np.diff(s)
            tail = alpha * (np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]]) + rem)
            i = int(np.argmax(tail < quad.eps_tail))
            return float(max(s[i], problem.T + 1e-3))
        L *= 2
    raise NumericalError("kernel tail does not decay")


def _alpha(problem):
    if problem.alpha is not None:
        return problem.alpha
    if problem.phase is not None:
        return 1.0
    ts = problem.T + np.concatenate([[0.0], np.geomspace(1e-3, 50.0, 40)])
    Ab = _kernel_blocks(problem.A, ts, ts, problem.n)
    upper = np.triu(np.ones((len(ts), len(ts)), dtype=bool))
    return float(_opnorm(Ab)[upper].max())


def _vec(f, t, n):
    v = np.asarray(f(t), dtype=complex)
    return v.reshape(len(t), n)


def _mat(f, t, n):
    return np.asarray(f(t), dtype=complex).reshape(len(t), n, n)


def _picard(op, rhs, n, tol, max_iter, start=None):
    x = rhs.copy() if start is None else start.copy()
    hist = []
    for it in range(1, max_iter + 1):
        xn = rhs - op @ x
        d = float(np.max(np.abs(xn - x))) if len(x) else 0.0
        hist.append(d)
        x = xn
        if d < tol:
            return x, it, hist
    raise PicardError(f"Picard iteration did not converge in {max_iter} steps (last diff {d:.3e})", d)


class _Operator:
    """Discrete integral operator on the panels, plain or exponential-product kernel."""

    def __init__(self, pan, n, K=None, B=None, phase=None, weights=None):
        self.pan, self.n = pan, n
        if phase is None:
            Kb = _kernel_blocks(K, pan.s, pan.s, n)
            self.lam = _lambda_from(pan, _opnorm(Kb), K, n)
            self.op = _assemble(Kb, pan.M)
            self._K = K
            self._B = None
        else:
            Bs = _mat(B, pan.s, n)
            Ms, Es = weights if weights is not None else pan.exp_weights(phase, n)
            self.weights = (Ms, Es)
            nb = _opnorm(Bs)
            # |A| <= 1, so the plain bound with ||B|| dominates int |K|
            lam = float(np.max(np.abs(pan.M) @ nb))
            lam = max(lam, float(np.max(pan.E @ nb)))
            self.lam = lam
            N = len(pan.s)
            self.op = np.einsum("aij,jab->iajb", Ms, Bs).reshape(N * n, N * n)
            self._B = Bs
            self._Es = Es

    def edges(self, x_nodes):
        """int_{edge}^{end} K x at every panel edge."""
        if self._B is None:
            Ke = _kernel_blocks(self._K, self.pan.edges, self.pan.s, self.n)
            return np.einsum("ij,ijab,jb->ia", self.pan.E, Ke, x_nodes)
        Bx = np.einsum("jab,jb->ja", self._B, x_nodes)
        return np.einsum("akj,ja->ka", self._Es, Bx)


def _operator(problem, pan):
    if problem.phase is not None:
        return _Operator(pan, problem.n, B=problem.B, phase=problem.phase)
    return _Operator(pan, problem.n, K=problem.kernel)


def picard_bound(problem: IvpAtInfinity, grid: GridSpec = GridSpec(), quad: Quadrature = DEFAULT_QUAD):
    """(lambda, ||a||_inf/(1 - lambda)); the bound is inf when lambda >= 1.

    lambda misses the kernel mass beyond the tail cut (at most ~eps_tail), so
    values within 10 eps_tail of 1 count as 1.
    """
    pan, av, _ = _discretise(problem, grid, quad)
    lam = _operator(problem, pan).lam
    anorm = float(np.max(np.linalg.norm(av, axis=-1)))
    return lam, (anorm / (1 - lam) if lam < 1 - 10 * quad.eps_tail else math.inf)


def _lambda_from(pan, nk, K=None, n=1):
    # sup over nodes (and panel edges when K is given) of int_t^end |K(t, s)| ds
    lam = float(np.max(np.sum(np.abs(pan.M) * nk, axis=1)))
    if K is not None:
        ne = _opnorm(_kernel_blocks(K, pan.edges, pan.s, n))
        lam = max(lam, float(np.max(np.sum(pan.E * ne, axis=1))))
    return lam


def _discretise(problem, grid, quad):
    T_max = grid.T_max if grid.T_max is not None else _tail_cut(problem, quad)
    pan = _Panels(_edges(problem.T, T_max, grid), grid.order)
    av = _vec(problem.a, pan.s, problem.n)
    return pan, av, T_max


def _interleave(pan, xe, x_nodes):
    vals = []
    p = pan.p
    for k in range(pan.npan):
        vals.append(xe[k:k + 1])
        vals.append(x_nodes[k * p:(k + 1) * p])
    vals.append(xe[-1:])
    return np.concatenate(vals)


def _finish(problem_a, opr, pan, x_nodes, n, lam, it, hist, tail, err, order):
    """Evaluate at panel edges by the Nystrom formula and interleave with nodes."""
    xe = _vec(problem_a, pan.edges, n) - opr.edges(x_nodes)
    return GridSolution(pan.output_grid(), _interleave(pan, xe, x_nodes), tail, err, pan.edges,
                        order, lam, it, hist)


def solve_ivp_infinity(problem: IvpAtInfinity, grid: GridSpec = GridSpec(),
                       quad: Quadrature = DEFAULT_QUAD, tol: float = 1e-14,
                       max_iter: int = 5000, margin: float = 0.05, start=None):
    """Fixed point of P(phi) = a - int_t^inf K phi by Picard iteration from phi_0 = a.

    ``start`` optionally replaces phi_0 (callable of t).
    """
    pan, av, T_max = _discretise(problem, grid, quad)
    n = problem.n
    opr = _operator(problem, pan)
    lam = opr.lam
    if lam >= 1 - margin:
        raise ContractionError(f"contraction constant {lam:.6g} >= 1 - {margin}", lam)
    rhs = av.reshape(-1)
    x0 = None if start is None else _vec(start, pan.s, n).reshape(-1)
    scale = max(1.0, float(np.max(np.abs(rhs))) if len(rhs) else 1.0)
    x, it, hist = _picard(opr.op, rhs, n, tol * scale, max_iter, x0)
    tail = (np.asarray(problem.a_inf, dtype=complex).reshape(n) if problem.a_inf is not None
            else _vec(problem.a, np.array([T_max]), n)[0])
    err = hist[-1] * lam / (1 - lam) + quad.eps_tail * scale / (1 - lam)
    sol = _finish(problem.a, opr, pan, x.reshape(-1, n), n, lam, it, hist, tail, err, grid.order)
    sol._op = opr
    return sol


def solve_finite(K: Callable | None, t_lo: float, t_hi: float, xb, Phi: Callable | None = None,
                 n: int | None = None, grid: GridSpec = GridSpec(), tol: float = 1e-14,
                 max_iter: int = 5000, margin: float = 0.05, B: Callable | None = None,
                 phase: Callable | None = None):
    """x(t) = Phi(t, b) x(b) - int_t^b K(t, s) x(s) ds on [t_lo, t_hi], b = t_hi.

    ``Phi(t, b)`` returns (..., n, n); identity when omitted. With ``phase``
    the kernel is diag(exp(phase(t) - phase(s))) B(s) and Phi defaults to the
    same diagonal exponential.
    """
    xb = np.atleast_1d(np.asarray(xb, dtype=complex))
    n = n or len(xb)
    if not t_hi > t_lo:
        raise ValueError("empty interval")
    if Phi is None and phase is not None:
        Phi = lambda t, b: _phase_matrix(phase, t, np.full(np.shape(t), b))
    if Phi is None:
        a = lambda t: np.broadcast_to(xb, np.shape(t) + (n,))
    else:
        a = lambda t: np.einsum("...ij,j->...i", Phi(t, t_hi), xb)
    pan = _Panels(_edges(t_lo, t_hi, grid), grid.order)
    opr = _Operator(pan, n, B=B, phase=phase) if phase is not None else _Operator(pan, n, K=K)
    lam = opr.lam
    if lam >= 1 - margin:
        raise ContractionError(f"contraction constant {lam:.6g} >= 1 - {margin}", lam)
    rhs = _vec(a, pan.s, n).reshape(-1)
    scale = max(1.0, float(np.max(np.abs(rhs))))
    x, it, hist = _picard(opr.op, rhs, n, tol * scale, max_iter)
    err = hist[-1] * lam / (1 - lam)
    return _finish(a, opr, pan, x.reshape(-1, n), n, lam, it, hist, xb, err, grid.order)


def solve_derivative(problem: IvpAtInfinity, da: Callable | None, base: GridSolution,
                     dA: Callable | None = None, dB: Callable | None = None,
                     dK: Callable | None = None, tol: float = 1e-14, max_iter: int = 5000):
    """Solve d x = [da - int (dK) x] - int K (dx) on the panels of ``base``.

    dK is assembled by the product rule dA B + A dB unless given directly.
    For exponential-product problems only ``dB`` is supported (the phase is
    held fixed).
    """
    n = problem.n
    pan = _Panels(base.edges, base.order)
    p = base.order
    idx = np.concatenate([np.arange(k * (p + 1) + 1, k * (p + 1) + 1 + p) for k in range(pan.npan)])
    x_nodes = base.values[idx]
    zero = lambda t: np.zeros(np.shape(t) + (n,), dtype=complex)
    da_ = da or zero
    if problem.phase is not None:
        if dA is not None or dK is not None:
            raise ValueError("phase problems take the derivative through dB only")
        opr = getattr(base, "_op", None) or _operator(problem, pan)
        f_nodes = _vec(da_, pan.s, n)
        fe = _vec(da_, pan.edges, n)
        if dB is not None:
            dop = _Operator(pan, n, B=dB, phase=problem.phase, weights=opr.weights)
            f_nodes = f_nodes - (dop.op @ x_nodes.reshape(-1)).reshape(-1, n)
            fe = fe - dop.edges(x_nodes)
    else:
        if dK is None:
            parts = []
            if dA is not None:
                parts.append(lambda t, s: dA(t, s) @ problem.B(s))
            if dB is not None:
                parts.append(lambda t, s: problem.A(t, s) @ dB(s))
            if parts:
                dK = lambda t, s: sum(f(t, s) for f in parts)
        opr = _operator(problem, pan)
        f_nodes = _vec(da_, pan.s, n)
        fe = _vec(da_, pan.edges, n)
        if dK is not None:
            dop = _Operator(pan, n, K=dK)
            f_nodes = f_nodes - (dop.op @ x_nodes.reshape(-1)).reshape(-1, n)
            fe = fe - dop.edges(x_nodes)
    lam = opr.lam
    rhs = f_nodes.reshape(-1)
    scale = max(1.0, float(np.max(np.abs(rhs))) if len(rhs) else 1.0)
    y, it, hist = _picard(opr.op, rhs, n, tol * scale, max_iter)
    y = y.reshape(-1, n)
    ye = fe - opr.edges(y)
    return GridSolution(base.grid.copy(), _interleave(pan, ye, y), np.zeros(n, dtype=complex),
                        hist[-1] * lam / max(1 - lam, 1e-300), base.edges, p, lam, it, hist)


def holomorphy_residual(solve_at: Callable[[complex], complex], eps0: complex, h: float = 1e-4):
    """Cauchy-Riemann residual |d_y f - i d_x f| of eps -> f(eps) by central differences."""
    fx = (solve_at(eps0 + h) - solve_at(eps0 - h)) / (2 * h)
    fy = (solve_at(eps0 + 1j * h) - solve_at(eps0 - 1j * h)) / (2 * h)
    return float(np.max(np.abs(fy - 1j * fx)))
