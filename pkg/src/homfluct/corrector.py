"""Regularized corrector: per-realization solutions of (lambda - Laplacian/2) Phi = V.

Gaussian fields invert the resolvent mode by mode (exact, closed form).
Shot-noise fields convolve the bump with the resolvent Green function; the
resulting radial kernel is tabulated once per (shape, lambda) and the
compensating constant is the integral of the *truncated* kernel, so the
truncation introduces no mean offset (the full-space compensator
total_mass/lambda differs from it by the discarded tail, which at small
lambda would dwarf the fluctuation being measured).
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, interpolate

from ._seeds import STREAM_LAW, generator
from .homogenization import green_lambda_radial
from .radial import radial_integral, radial_inverse_fourier, sphere_area
from .random_field import (GaussianFieldRealization, PoissonFieldRealization,
                           ShapeFunction, SpectrumModel,
                           make_importance_gaussian_field)

_CHUNK_ELEMENTS = 1 << 22


def corrector_variance(spec: SpectrumModel, lam: float) -> float:
    """Stationary second moment of the corrector: (2 pi)^{-d} integral of
    spectrum(k)/(lam + k^2/2)^2 (radial quadrature, relative error <= 1e-6)."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if spec.spectrum_total() == 0.0:
        return 0.0
    d = spec.dimension
    a = math.sqrt(2.0 * lam)
    val = radial_integral(lambda k: spec.spectrum(k) / (lam + 0.5 * k ** 2) ** 2, d,
                          rmax=spec.spectral_cutoff(),
                          points=(0.3 * a, a, 3.0 * a, 10.0 * a), epsrel=1e-10)
    return (2.0 * math.pi) ** (-d) * val


def sigma_lambda2(spec: SpectrumModel, lam: float) -> float:
    """Second moment of the corrector gradient: (2 pi)^{-d} integral of
    spectrum(k) k^2/(lam + k^2/2)^2; converges to the effective constant as lam -> 0."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if spec.spectrum_total() == 0.0:
        return 0.0
    d = spec.dimension
    a = math.sqrt(2.0 * lam)
    val = radial_integral(lambda k: spec.spectrum(k) * k ** 2 / (lam + 0.5 * k ** 2) ** 2, d,
                          rmax=spec.spectral_cutoff(),
                          points=(0.3 * a, a, 3.0 * a, 10.0 * a), epsrel=1e-10)
    return (2.0 * math.pi) ** (-d) * val


def stationary_corrector_exists(spec: SpectrumModel) -> tuple[bool, float]:
    """Whether the lambda -> 0 corrector limit lives in L2.

    True iff spectrum(k)/k^4 is integrable near the origin, i.e. iff d >= 5
    for the supported families (or the spectrum vanishes identically).
    Returns (exists, diagnostic integral or +inf).
    """
    if spec.spectrum_total() == 0.0:
        return True, 0.0
    d = spec.dimension
    if d < 5:
        return False, math.inf
    val = radial_integral(lambda k: spec.spectrum(k) / k ** 4, d,
                          rmax=spec.spectral_cutoff(), epsrel=1e-10)
    return True, (2.0 * math.pi) ** (-d) * val


@dataclass
class D4LogTable:
    lambdas: np.ndarray
    variances: np.ndarray
    ratios: np.ndarray       # variance / |log lambda|
    limit: float             # nominal limit 2 (2 pi)^{-4} spectrum(0)
    last_rel_dev: float      # |ratios[-1] - limit| / limit


def d4_log_asymptotics(spec: SpectrumModel, lambdas) -> D4LogTable:
    """Logarithmic growth of the corrector second moment at the critical dimension.

    Tabulates variance(lambda)/|log lambda| on the given grid together with
    the nominal limit 2 (2 pi)^{-4} spectrum(0).
    """
    if spec.dimension != 4:
        raise ValueError("log asymptotics are specific to dimension 4")
    lams = np.asarray(sorted(lambdas, reverse=True), dtype=float)
    if lams.size == 0 or lams[-1] <= 0:
        raise ValueError("need a grid of positive lambda values")
    variances = np.array([corrector_variance(spec, lam) for lam in lams])
    ratios = variances / np.abs(np.log(lams))
    limit = 2.0 * (2.0 * math.pi) ** (-4) * float(spec.spectrum(0.0))
    dev = abs(ratios[-1] - limit) / limit if limit else math.inf
    return D4LogTable(lams, variances, ratios, limit, dev)


def _resolvent_kernel(shape: ShapeFunction, lam: float, r_trunc: float):
    """Radial profile of bump * resolvent Green function, spline-tabulated on (0, r_trunc].

    Near field (r inside ~1.5 bump radii) by spectral inversion of
    phihat(k)/(lam + k^2/2); far field by direct 2-D quadrature of the
    convolution against the closed-form Green function (the integrand is
    smooth there because the singularity sits outside the bump support).
    """
    d = shape.dimension
    r0 = shape.support_radius
    r_near = 1.5 * r0 + 0.5
    kmax = shape.fourier_cutoff

    def near(r):
        return radial_inverse_fourier(lambda k: shape.fourier(k) / (lam + 0.5 * k ** 2),
                                      d, r, kmax, epsrel=1e-11)

    gl_r, gl_wr = np.polynomial.legendre.leggauss(48)
    rho = 0.5 * r0 * (gl_r + 1.0)
    w_rho = 0.5 * r0 * gl_wr * shape.profile(rho) * rho ** (d - 1)
    gl_p, gl_wp = np.polynomial.legendre.leggauss(48)
    psi = 0.5 * math.pi * (gl_p + 1.0)
    w_psi = 0.5 * math.pi * gl_wp * np.sin(psi) ** (d - 2)
    area = sphere_area(d - 1)

    def far(r):
        dist = np.sqrt(np.maximum(r ** 2 + rho[:, None] ** 2
                                  - 2.0 * r * rho[:, None] * np.cos(psi)[None, :], 1e-300))
        gvals = green_lambda_radial(dist, lam, d)
        return float(area * (w_rho @ gvals @ w_psi))

    grid_near = np.linspace(0.0, r_near, 160)
    grid_far = np.geomspace(r_near * 1.02, max(r_trunc, r_near * 1.1), 1200)
    grid = np.concatenate([grid_near, grid_far])
    with warnings.catch_warnings():
        # quad is pushed to roundoff on the oscillatory near-field inversion;
        # accuracy is certified by the overlap with the far-field route instead
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        vals = np.array([near(r) for r in grid_near] + [far(r) for r in grid_far])
    return interpolate.CubicSpline(grid, vals), grid[-1]


_KERNEL_CACHE: dict = {}


def _cached_kernel(shape: ShapeFunction, lam: float, r_trunc: float):
    """(spline, r_used, truncated mass) for one (shape, lambda, truncation)."""
    key = (shape.dimension, float(shape.support_radius), float(shape.scale),
           float(lam), round(float(r_trunc), 9))
    if key not in _KERNEL_CACHE:
        spline, r_used = _resolvent_kernel(shape, lam, r_trunc)
        d = shape.dimension
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            mass, _ = integrate.quad(lambda r: spline(r) * r ** (d - 1),
                                     0.0, r_used, limit=400, epsrel=1e-12)
        _KERNEL_CACHE[key] = (spline, r_used, sphere_area(d) * mass)
    return _KERNEL_CACHE[key]


class CorrectorEvaluator:
    """Pointwise corrector and gradient for one frozen field realization."""

    def __init__(self, field, lam: float):
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.field = field
        self.lam = float(lam)
        if isinstance(field, GaussianFieldRealization):
            self.kind = "gaussian"
            self._denom = self.lam + 0.5 * np.sum(field.frequencies ** 2, axis=1)
        elif isinstance(field, PoissonFieldRealization):
            self.kind = "poisson"
            shape = field.shape
            r_trunc = 10.0 / math.sqrt(2.0 * self.lam) + shape.support_radius
            # compensator matched to the truncated kernel: keeps the mean at 0 exactly
            self._kernel, self.r_trunc, self.compensator = \
                _cached_kernel(shape, self.lam, r_trunc)
            self._kernel_grad = self._kernel.derivative()
        else:
            raise TypeError(f"unsupported field type {type(field).__name__}")

    # -- Gaussian route: diagonal resolvent over modes ------------------------------
    def _gaussian_tables(self, pts: np.ndarray):
        f = self.field
        step = max(1, _CHUNK_ELEMENTS // max(1, f.n_modes))
        for lo in range(0, pts.shape[0], step):
            block = pts[lo:lo + step]
            args = block @ f.frequencies.T + f.phases
            yield lo, block.shape[0], args

    def _poisson_cloud(self, pts: np.ndarray) -> np.ndarray:
        """All shot-noise points within kernel reach of any evaluation point."""
        f = self.field
        cell = f.cell_size
        lo = np.floor((pts.min(axis=0) - self.r_trunc) / cell).astype(np.int64)
        hi = np.floor((pts.max(axis=0) + self.r_trunc) / cell).astype(np.int64)
        counts = hi - lo + 1
        if np.prod(counts.astype(float)) > 4e6:
            raise ValueError("corrector evaluation region too large; "
                             "this truncation radius needs the spectral route")
        ranges = [range(int(a), int(b) + 1) for a, b in zip(lo, hi)]
        clouds = [f.cell_points(np.asarray(idx)) for idx in itertools.product(*ranges)]
        return np.concatenate(clouds, axis=0)

    def _poisson_pairs(self, pts: np.ndarray):
        cloud = self._poisson_cloud(pts)
        step = max(1, _CHUNK_ELEMENTS // max(1, cloud.shape[0]))
        for lo in range(0, pts.shape[0], step):
            block = pts[lo:lo + step]
            diff = block[:, None, :] - cloud[None, :, :]
            r = np.sqrt(np.maximum(np.sum(diff * diff, axis=2), 1e-300))
            yield lo, block.shape[0], diff, r, r < self.r_trunc

    def evaluate(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(pts.shape[0])
        if self.kind == "gaussian":
            f = self.field
            w = f.weights / self._denom
            for lo, n, args in self._gaussian_tables(pts):
                out[lo:lo + n] = np.cos(args) @ w
        else:
            for lo, n, _, r, near in self._poisson_pairs(pts):
                out[lo:lo + n] = np.sum(np.where(near, self._kernel(r), 0.0),
                                        axis=1) - self.compensator
        if np.ndim(points) == 1:
            return float(out[0])
        return out

    def gradient(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = pts.shape[1]
        out = np.empty((pts.shape[0], d))
        if self.kind == "gaussian":
            f = self.field
            w = f.weights / self._denom
            for lo, n, args in self._gaussian_tables(pts):
                out[lo:lo + n] = -(np.sin(args) * w) @ f.frequencies
        else:
            for lo, n, diff, r, near in self._poisson_pairs(pts):
                slope = np.where(near, self._kernel_grad(r) / r, 0.0)
                out[lo:lo + n] = np.einsum("pc,pcd->pd", slope, diff)
        if np.ndim(points) == 1:
            return out[0]
        return out

    def with_field(self, points):
        """(V, corrector, gradient) sharing one pass of trig tables (Gaussian fields)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind != "gaussian":
            return (self.field.evaluate(pts), self.evaluate(pts), self.gradient(pts))
        f = self.field
        w_phi = f.weights / self._denom
        v = np.empty(pts.shape[0])
        phi = np.empty(pts.shape[0])
        grad = np.empty((pts.shape[0], pts.shape[1]))
        for lo, n, args in self._gaussian_tables(pts):
            c = np.cos(args)
            s = np.sin(args)
            v[lo:lo + n] = c @ f.weights
            phi[lo:lo + n] = c @ w_phi
            grad[lo:lo + n] = -(s * w_phi) @ f.frequencies
        return v, phi, grad


def eval_corrector(ev: CorrectorEvaluator, x):
    return ev.evaluate(x)


def eval_corrector_grad(ev: CorrectorEvaluator, x):
    return ev.gradient(x)


def make_corrector_matched_field(spec: SpectrumModel, lam: float, n_modes: int,
                                 seed: int) -> GaussianFieldRealization:
    """Gaussian field whose mode radii are importance-matched to the resolvent.

    Plain spectral sampling almost never draws the near-origin frequencies
    that carry most of the corrector's variance when lambda is tiny (their
    per-mode probability is O(k^d) while their resolvent weight is O(k^-4)),
    which leaves finite-J corrector samples far from their Gaussian limit.
    The mixture density used here bounds every mode's corrector contribution,
    restoring O(J^{-1/2}) normality without touching the field covariance.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    a = math.sqrt(2.0 * lam)
    return make_importance_gaussian_field(
        spec, n_modes, seed,
        radial_weight=lambda k: 1.0 / (lam + 0.5 * k ** 2),
        k_floor=min(a / 100.0, spec.spectral_cutoff() * 1e-6))


def sample_poisson_corrector_origin(shape: ShapeFunction, lam: float,
                                    n_samples: int, seed: int,
                                    n_theta: int = 4096, n_v: int = 4097) -> np.ndarray:
    """Exact-law draws of the shot-noise corrector at the origin.

    The corrector at a point is a compensated Poisson integral of the radial
    kernel, so its characteristic function is the Levy exponent
    exp(S_{d-1} int (e^{i theta f(r)} - 1 - i theta f(r)) r^{d-1} dr).
    Tiny lambda makes direct simulation impossible (the kernel reaches
    O(1/sqrt(lambda)) and the cloud would need ~1/lambda^2 points), so the
    density is recovered by numerical inversion of the characteristic
    function and sampled by inverse transform.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    d = shape.dimension
    r_far = 40.0 / math.sqrt(2.0 * lam) + shape.support_radius
    kernel, r_far, _ = _cached_kernel(shape, lam, r_far)
    area = sphere_area(d)

    r_grid = np.concatenate([np.linspace(1e-6, 1.0, 400, endpoint=False),
                             np.geomspace(1.0, r_far, 6000)])
    f_vals = kernel(r_grid)
    meas = r_grid ** (d - 1)

    def levy_exponent(thetas: np.ndarray) -> np.ndarray:
        out = np.empty(thetas.shape, dtype=complex)
        for i, th in enumerate(thetas):
            tf = th * f_vals
            re = -2.0 * np.sin(0.5 * tf) ** 2
            im = np.where(np.abs(tf) < 1e-4, -tf ** 3 / 6.0 + tf ** 5 / 120.0,
                          np.sin(tf) - tf)
            out[i] = area * (np.trapezoid(re * meas, r_grid)
                             + 1j * np.trapezoid(im * meas, r_grid))
        return out

    var = area * float(np.trapezoid(f_vals ** 2 * meas, r_grid))
    sd = math.sqrt(var)
    theta_max = 3.0 / sd
    while True:
        mag = float(np.real(levy_exponent(np.array([theta_max]))[0]))
        if mag < -30.0 or theta_max > 1e6 / sd:
            break
        theta_max *= 1.4

    thetas = np.linspace(0.0, theta_max, int(n_theta))
    chi = np.exp(levy_exponent(thetas))
    v_grid = np.linspace(-12.0 * sd, 12.0 * sd, int(n_v))
    dens = np.empty_like(v_grid)
    step = max(1, _CHUNK_ELEMENTS // int(n_theta))
    for lo in range(0, v_grid.size, step):
        block = v_grid[lo:lo + step, None] * thetas[None, :]
        dens[lo:lo + step] = np.trapezoid(np.real(chi[None, :] * np.exp(-1j * block)),
                                          thetas, axis=1) / math.pi
    dens = np.clip(dens, 0.0, None)
    cdf = np.concatenate(([0.0], np.cumsum((dens[1:] + dens[:-1]) * np.diff(v_grid) * 0.5)))
    total = cdf[-1]
    if not 0.999 < total < 1.001:
        raise ValueError(f"characteristic-function inversion lost mass: total={total:.6f}")
    cdf /= total
    keep = np.concatenate(([True], np.diff(cdf) > 0))
    rng = generator(seed, STREAM_LAW, 4)
    return np.interp(rng.random(int(n_samples)), cdf[keep], v_grid[keep])
