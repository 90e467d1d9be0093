"""Independent reference computations shared by the tests.

Every function here uses a route different from the package: mpmath or
scipy quadrature, closed forms, or brute-force iteration.
"""
import mpmath as mp
import numpy as np
from scipy import integrate

mp.mp.dps = 30

# frozen from mpmath.besselk at 30 digits
K0_1 = 0.42102443824070833334
K1_1 = 0.60190723019723457473


def bessel_mp(order, x):
    return float(mp.besselk(order, x))


def bessel_cosh_quad(order, x):
    f = (lambda y: np.exp(-x * np.cosh(y))) if order == 0 else (lambda y: np.cosh(y) * np.exp(-x * np.cosh(y)))
    return integrate.quad(f, 0, 30.0, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def volterra_exp_closed(t, c=0.5):
    """x(t) = exp(-c e^{-t}) solves x = 1 - int_t^inf c e^{-s} x(s) ds."""
    return np.exp(-c * np.exp(-np.asarray(t)))


def volterra_dense_picard(c, a, b, xb, n=10_001, iters=200):
    """x(t) = xb - int_t^b c x(s) ds by Picard on a uniform trapezoid grid."""
    t = np.linspace(a, b, n)
    x = np.full(n, xb, dtype=float)
    h = t[1] - t[0]
    for _ in range(iters):
        f = c * x
        cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (f[1:] + f[:-1]))])
        tail = cum[-1] - cum
        x = xb - tail
    return t, x


def tba_first_correction(Z, theta, R, zeta, sigma=1, omega=1, pair=1):
    """Correction of log X_g at zeta from one ray of charge b with <g, b> = pair, using
    the semiflat X_b on the ray, by dense scipy quadrature in s with zeta' = -Z_b s/|Z_b|.

    Returns -(pair Omega / 4 pi i) int_ray dzeta'/zeta' (zeta'+zeta)/(zeta'-zeta) log(1 - sigma X_b^sf).
    """
    u = Z / abs(Z)

    def integrand(s, part):
        zp = -u * s
        x = np.exp(R * np.pi * Z / zp + 1j * theta + R * np.pi * zp * np.conj(Z))
        val = (zp + zeta) / (zp - zeta) * np.log(1 - sigma * x) / s
        return val.real if part == 0 else val.imag

    pts = [abs(zeta)] if abs(np.angle(zeta / -u)) < 1e-12 else None
    tot = 0j
    for lo, hi in ((0, 1), (1, np.inf)):
        re = integrate.quad(integrand, lo, hi, args=(0,), epsabs=1e-15, epsrel=1e-13, limit=400)[0]
        im = integrate.quad(integrand, lo, hi, args=(1,), epsabs=1e-15, epsrel=1e-13, limit=400)[0]
        tot += re + 1j * im
    return -pair * omega / (4j * np.pi) * tot
