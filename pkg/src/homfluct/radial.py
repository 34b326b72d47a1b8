"""Radial quadrature helpers for isotropic functions on R^d.

All spectra and kernels in this package are radial, so every d-dimensional
integral reduces to a 1-D integral against the surface measure of the unit
(d-1)-sphere, and Fourier transforms reduce to Hankel (Bessel) transforms.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special

#: relative tail threshold used when choosing truncation radii
TAIL_FRACTION = 1e-12


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1} in R^d."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def _auto_rmax(integrand, r_lo: float = 1e-3, r_hi: float = 1.0) -> float:
    """Grow the upper limit until the integrand falls below TAIL_FRACTION of its peak."""
    grid = np.geomspace(max(r_lo, 1e-12), max(r_hi, 1.0), 64)
    peak = float(np.max(np.abs([integrand(r) for r in grid])))
    if peak == 0.0:
        return max(r_hi, 1.0)
    rmax = max(r_hi, 1.0)
    for _ in range(200):
        if abs(integrand(rmax)) < TAIL_FRACTION * peak:
            return rmax
        rmax *= 1.5
    return rmax


def radial_integral(f, d: int, rmax: float | None = None,
                    points: tuple[float, ...] = (), epsrel: float = 1e-10) -> float:
    """Integral of the radial function f(|x|) over R^d.

    Reduces to sphere_area(d) * int_0^rmax f(r) r^(d-1) dr with adaptive
    1-D quadrature.  `points` marks interior breakpoints (sharp resolvent
    peaks at scale sqrt(lambda), kernel support edges, ...).
    """
    integrand = lambda r: f(r) * r ** (d - 1)
    if rmax is None:
        rmax = _auto_rmax(integrand)
    pts = sorted(p for p in points if 0.0 < p < rmax)
    val, _ = integrate.quad(integrand, 0.0, rmax, points=pts or None,
                            limit=400, epsabs=1e-15, epsrel=epsrel)
    return sphere_area(d) * val


def radial_fourier(f, d: int, k: float, rmax: float,
                   epsrel: float = 1e-10) -> float:
    """Fourier transform at radius k of a radial function supported in [0, rmax].

    fhat(k) = (2 pi)^{d/2} k^{1-d/2} int_0^rmax f(r) r^{d/2} J_{d/2-1}(k r) dr,
    real-valued since f is even.
    """
    if k == 0.0:
        val, _ = integrate.quad(lambda r: f(r) * r ** (d - 1), 0.0, rmax,
                                limit=400, epsabs=1e-15, epsrel=epsrel)
        return sphere_area(d) * val
    nu = d / 2.0 - 1.0
    integrand = lambda r: f(r) * r ** (d / 2.0) * special.jv(nu, k * r)
    val, _ = integrate.quad(integrand, 0.0, rmax, limit=400,
                            epsabs=1e-15, epsrel=epsrel)
    return (2.0 * math.pi) ** (d / 2.0) * k ** (1.0 - d / 2.0) * val


def radial_inverse_fourier(fhat, d: int, r: float, kmax: float,
                           epsrel: float = 1e-10) -> float:
    """Inverse Fourier transform at radius r of a radial spectral function.

    g(r) = (2 pi)^{-d/2} r^{1-d/2} int_0^kmax fhat(k) k^{d/2} J_{d/2-1}(k r) dk.
    The caller chooses kmax so the spectral tail is negligible.
    """
    if r == 0.0:
        val, _ = integrate.quad(lambda k: fhat(k) * k ** (d - 1), 0.0, kmax,
                                limit=400, epsabs=1e-15, epsrel=epsrel)
        return sphere_area(d) * val / (2.0 * math.pi) ** d
    nu = d / 2.0 - 1.0
    integrand = lambda k: fhat(k) * k ** (d / 2.0) * special.jv(nu, k * r)
    val, _ = integrate.quad(integrand, 0.0, kmax, limit=400,
                            epsabs=1e-15, epsrel=epsrel)
    return (2.0 * math.pi) ** (-d / 2.0) * r ** (1.0 - d / 2.0) * val
