"""Stationary mean-zero random potentials and their exact moment identities.

Two constructions are provided:

* Gaussian fields via randomized spectral synthesis: a superposition of J
  cosine modes whose frequencies are drawn from the normalized power spectrum.
  The two-point covariance is exact in expectation over mode draws for every
  J; higher moments approach the Gaussian ones at rate O(J^{-1/2}).  The
  finite-J field is therefore a stand-in for a true Gaussian (and in
  particular is not literally mixing); tests that depend on Gaussianity state
  their J explicitly.
* Poissonian shot noise: bumps dropped on a unit-intensity Poisson cloud,
  recentred so the mean vanishes exactly.  Points are materialized lazily per
  spatial cell from a counter-based seed, so evaluation is query-order
  independent.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as _field

import numpy as np
from scipy import interpolate

from ._seeds import STREAM_CELLS, STREAM_CHECKS, STREAM_MODES, generator
from .estimates import MCEstimate
from .radial import radial_fourier, radial_integral, radial_inverse_fourier, sphere_area

#: element budget for chunked (points x modes) evaluations
_CHUNK_ELEMENTS = 1 << 22


@dataclass
class ShapeFunction:
    """Compactly supported smooth bump used by the shot-noise construction.

    profile(r) = scale * exp(-1/(1-(r/support_radius)^2)) inside the support
    ball, 0 outside.  The integral of the profile (total_mass) and its squared
    L2 norm are cached at construction.
    """
    dimension: int
    support_radius: float = 1.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dimension}")
        if self.support_radius <= 0:
            raise ValueError("support_radius must be positive")
        if self.scale == 0:
            raise ValueError("scale must be nonzero: the induced spectrum would vanish at 0")
        self.total_mass = radial_integral(self.profile, self.dimension,
                                          rmax=self.support_radius)
        self.l2_norm_sq = radial_integral(lambda r: self.profile(r) ** 2,
                                          self.dimension, rmax=self.support_radius)
        self._fourier_spline = None
        self._fourier_kmax = 0.0

    def profile(self, r):
        arr = np.atleast_1d(np.asarray(r, dtype=float))
        u2 = (arr / self.support_radius) ** 2
        out = np.zeros_like(u2)
        mask = u2 < 1.0
        with np.errstate(over="ignore", under="ignore"):
            out[mask] = np.exp(-1.0 / (1.0 - u2[mask]))
        out *= self.scale
        if np.ndim(r) == 0:
            return float(out[0])
        return out.reshape(np.shape(r))

    def _build_fourier_spline(self) -> None:
        """Tabulate the radial Fourier transform out to where |phihat|^2 is negligible."""
        kmax = 40.0 / self.support_radius
        peak = self.total_mass ** 2
        while True:
            probe = np.linspace(0.9 * kmax, kmax, 16)
            tail = max(radial_fourier(self.profile, self.dimension, k,
                                      self.support_radius) ** 2 for k in probe)
            if tail < 1e-14 * peak or kmax > 1e4 / self.support_radius:
                break
            kmax *= 1.5
        grid = np.linspace(0.0, kmax, 2048)
        vals = np.array([radial_fourier(self.profile, self.dimension, k,
                                        self.support_radius) for k in grid])
        self._fourier_spline = interpolate.CubicSpline(grid, vals)
        self._fourier_kmax = kmax

    def fourier(self, k):
        """Radial Fourier transform phihat(|xi|=k), spline-tabulated after first use."""
        if self._fourier_spline is None:
            self._build_fourier_spline()
        arr = np.atleast_1d(np.asarray(k, dtype=float))
        out = np.where(arr <= self._fourier_kmax, self._fourier_spline(np.minimum(arr, self._fourier_kmax)), 0.0)
        if np.ndim(k) == 0:
            return float(out[0])
        return out.reshape(np.shape(k))

    @property
    def fourier_cutoff(self) -> float:
        if self._fourier_spline is None:
            self._build_fourier_spline()
        return self._fourier_kmax


@dataclass
class SpectrumModel:
    """Radial power spectrum of the potential.

    gaussian_bump:    spectrum(k) = amplitude * exp(-k^2/(2 width^2))
    poisson_induced:  spectrum(k) = phihat(k)^2 for the attached ShapeFunction
    """
    dimension: int
    family: str = "gaussian_bump"
    amplitude: float = 1.0
    width: float = 1.0
    shape: ShapeFunction | None = None

    def __post_init__(self) -> None:
        if self.dimension < 3:
            raise ValueError(
                f"dimension must be >= 3 (origin singularity of the effective-constant "
                f"integral is non-integrable below 3), got {self.dimension}")
        if self.family not in ("gaussian_bump", "poisson_induced"):
            raise ValueError(f"unknown spectrum family {self.family!r}")
        if self.family == "gaussian_bump":
            if self.amplitude < 0:
                raise ValueError("amplitude must be >= 0")
            if self.width <= 0:
                raise ValueError("width must be positive")
        else:
            if self.shape is None:
                raise ValueError("poisson_induced spectrum needs a ShapeFunction")
            if self.shape.dimension != self.dimension:
                raise ValueError("shape dimension does not match spectrum dimension")

    def spectrum(self, k):
        if self.family == "gaussian_bump":
            arr = np.asarray(k, dtype=float)
            return self.amplitude * np.exp(-arr ** 2 / (2.0 * self.width ** 2))
        vals = self.shape.fourier(k)
        return np.square(vals) if np.ndim(k) else vals ** 2

    def spectrum_total(self) -> float:
        """Integral of the spectrum over R^d (closed form / Parseval)."""
        if self.family == "gaussian_bump":
            return self.amplitude * (2.0 * math.pi) ** (self.dimension / 2.0) * self.width ** self.dimension
        return (2.0 * math.pi) ** self.dimension * self.shape.l2_norm_sq

    def spectral_cutoff(self) -> float:
        """Radius beyond which the spectrum is below ~1e-12 of its peak."""
        if self.family == "gaussian_bump":
            return 9.0 * self.width
        return self.shape.fourier_cutoff

    def covariance_radial(self, r: float) -> float:
        d = self.dimension
        if self.family == "gaussian_bump":
            return (self.amplitude * self.width ** d * (2.0 * math.pi) ** (-d / 2.0)
                    * math.exp(-self.width ** 2 * r ** 2 / 2.0))
        return radial_inverse_fourier(self.spectrum, d, r, self.spectral_cutoff(),
                                      epsrel=1e-11)


def covariance(spec: SpectrumModel, x) -> float:
    """Covariance R(x) of the potential at lag x (d-vector or scalar radius)."""
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float))))
    return spec.covariance_radial(r)


@dataclass
class GaussianFieldRealization:
    """Finite-mode field V(x) = sum_j weights[j] * cos(<frequencies[j], x> + phases[j])."""
    spectrum: SpectrumModel
    weights: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    seed: int

    @property
    def n_modes(self) -> int:
        return self.phases.shape[0]

    def evaluate(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.spectrum.dimension:
            raise ValueError("point dimension mismatch")
        out = np.empty(pts.shape[0])
        step = max(1, _CHUNK_ELEMENTS // max(1, self.n_modes))
        for lo in range(0, pts.shape[0], step):
            block = pts[lo:lo + step]
            out[lo:lo + step] = np.cos(block @ self.frequencies.T + self.phases) @ self.weights
        if np.ndim(points) == 1:
            return float(out[0])
        return out


def _radial_icdf_table(pdf_grid: np.ndarray, k_grid: np.ndarray):
    cdf = np.concatenate(([0.0], np.cumsum((pdf_grid[1:] + pdf_grid[:-1])
                                           * np.diff(k_grid) * 0.5)))
    total = cdf[-1]
    if total <= 0:
        raise ValueError("spectrum mass vanishes; cannot sample frequencies")
    return cdf / total, total


def _sample_directions(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    vecs = rng.standard_normal((n, d))
    norms = np.linalg.norm(vecs, axis=1)
    norms[norms == 0] = 1.0
    return vecs / norms[:, None]


def make_gaussian_field(spec: SpectrumModel, n_modes: int, seed: int) -> GaussianFieldRealization:
    """Randomized spectral synthesis with frequencies drawn from the normalized spectrum.

    All mode weights equal sqrt(2*total/((2 pi)^d * J)), which makes
    E{V(x)V(y)} equal to the covariance exactly for every J.
    """
    if int(n_modes) < 1:
        raise ValueError("n_modes must be >= 1")
    n_modes = int(n_modes)
    d = spec.dimension
    rng = generator(seed, STREAM_MODES)
    total = spec.spectrum_total()
    if total == 0.0:
        frequencies = np.zeros((n_modes, d))
        phases = rng.uniform(0.0, 2.0 * math.pi, n_modes)
        return GaussianFieldRealization(spec, np.zeros(n_modes), frequencies, phases, seed)
    if spec.family == "gaussian_bump":
        frequencies = rng.normal(0.0, spec.width, (n_modes, d))
    else:
        k_grid = np.linspace(0.0, spec.spectral_cutoff(), 4096)
        pdf = spec.spectrum(k_grid) * k_grid ** (d - 1)
        cdf, _ = _radial_icdf_table(pdf, k_grid)
        radii = np.interp(rng.random(n_modes), cdf, k_grid)
        frequencies = radii[:, None] * _sample_directions(rng, n_modes, d)
    phases = rng.uniform(0.0, 2.0 * math.pi, n_modes)
    w = math.sqrt(2.0 * total / ((2.0 * math.pi) ** d * n_modes))
    return GaussianFieldRealization(spec, np.full(n_modes, w), frequencies, phases, seed)


def make_importance_gaussian_field(spec: SpectrumModel, n_modes: int, seed: int,
                                   radial_weight, k_floor: float) -> GaussianFieldRealization:
    """Spectral synthesis with importance-sampled frequencies.

    Mode radii are drawn from an equal mixture of the spectrum-proportional
    density and a tilted density proportional to spectrum(k)*k^(d-1)*
    radial_weight(k)^2; per-mode amplitudes carry the inverse density so the
    field covariance stays exact.  Use when a linear functional of the field
    (e.g. a resolvent average) concentrates its variance on a spectral region
    that plain sampling rarely visits: the mixture bounds every mode's
    contribution to that functional, which keeps finite-J sums close to
    Gaussian.  `k_floor` must sit well below the smallest scale radial_weight
    cares about.
    """
    if int(n_modes) < 1:
        raise ValueError("n_modes must be >= 1")
    n_modes = int(n_modes)
    d = spec.dimension
    kmax = spec.spectral_cutoff()
    if not 0.0 < k_floor < kmax:
        raise ValueError("k_floor must lie inside (0, spectral cutoff)")
    rng = generator(seed, STREAM_MODES)
    k_grid = np.geomspace(k_floor, kmax, 1 << 14)
    base = spec.spectrum(k_grid) * k_grid ** (d - 1)
    tilt = base * np.asarray(radial_weight(k_grid), dtype=float) ** 2
    cdf_b, z_b = _radial_icdf_table(base, k_grid)
    cdf_t, z_t = _radial_icdf_table(tilt, k_grid)
    pick_tilt = rng.random(n_modes) < 0.5
    u = rng.random(n_modes)
    radii = np.where(pick_tilt, np.interp(u, cdf_t, k_grid), np.interp(u, cdf_b, k_grid))
    # mixture density per unit radius, then per unit volume on R^d
    dens_r = 0.5 * np.interp(radii, k_grid, base) / z_b + 0.5 * np.interp(radii, k_grid, tilt) / z_t
    dens_vol = dens_r / (sphere_area(d) * radii ** (d - 1))
    weights = np.sqrt(2.0 * spec.spectrum(radii) / ((2.0 * math.pi) ** d * n_modes * dens_vol))
    frequencies = radii[:, None] * _sample_directions(rng, n_modes, d)
    phases = rng.uniform(0.0, 2.0 * math.pi, n_modes)
    return GaussianFieldRealization(spec, weights, frequencies, phases, seed)


@dataclass
class PoissonFieldRealization:
    """Shot noise V(x) = sum_p profile(x - y_p) - total_mass over a unit-intensity cloud.

    Points are generated lazily per cell of side cell_size = max(2*support_radius, 1);
    each cell's generator is a pure function of (seed, cell index), so any query
    order yields identical points and the realization is safe to share.
    """
    shape: ShapeFunction
    seed: int

    def __post_init__(self) -> None:
        self.cell_size = max(2.0 * self.shape.support_radius, 1.0)
        self._cells: dict = {}
        d = self.shape.dimension
        self._offsets = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)

    def cell_points(self, index) -> np.ndarray:
        key = tuple(int(i) for i in index)
        cached = self._cells.get(key)
        if cached is not None:
            return cached
        d = self.shape.dimension
        rng = generator(self.seed, STREAM_CELLS, *key)
        count = rng.poisson(self.cell_size ** d)
        origin = np.asarray(key, dtype=float) * self.cell_size
        pts = origin + rng.random((count, d)) * self.cell_size
        self._cells[key] = pts
        return pts

    def evaluate(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.shape.dimension
        if pts.shape[1] != d:
            raise ValueError("point dimension mismatch")
        r0 = self.shape.support_radius
        out = np.empty(pts.shape[0])
        for i, x in enumerate(pts):
            base = np.floor(x / self.cell_size).astype(np.int64)
            clouds = [self.cell_points(base + off) for off in self._offsets]
            ys = np.concatenate(clouds, axis=0)
            acc = 0.0
            if ys.shape[0]:
                dist2 = np.sum((ys - x) ** 2, axis=1)
                near = dist2 < r0 * r0
                if near.any():
                    acc = float(np.sum(self.shape.profile(np.sqrt(dist2[near]))))
            out[i] = acc - self.shape.total_mass
        if np.ndim(points) == 1:
            return float(out[0])
        return out


def make_poisson_field(shape: ShapeFunction, seed: int) -> PoissonFieldRealization:
    if shape.total_mass == 0:
        raise ValueError("shape with zero total mass gives a degenerate spectrum")
    return PoissonFieldRealization(shape, seed)


def eval_field(field, x):
    """Evaluate a field realization of either kind at x (d-vector or (N, d) array)."""
    return field.evaluate(x)


def _box_quadrature(box: np.ndarray, order: int):
    nodes, wts = np.polynomial.legendre.leggauss(order)
    axes, weights = [], []
    for lo, hi in box:
        axes.append(0.5 * (hi + lo) + 0.5 * (hi - lo) * nodes)
        weights.append(0.5 * (hi - lo) * wts)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*weights, indexing="ij")
    w = np.ones(pts.shape[0])
    for m in wmesh:
        w *= m.ravel()
    return pts, w


def _check_supports_inside(funcs, box: np.ndarray, order: int) -> None:
    """Reject test functions whose support leaks outside the box.

    Probes a shell of points in a 20%-enlarged box that lie strictly outside
    the original box; each function must vanish there (relative to its size
    on interior nodes).  An indicator of the box itself passes: every shell
    point is outside its support.
    """
    grown = np.empty_like(box)
    margin = 0.1 * (box[:, 1] - box[:, 0])
    grown[:, 0] = box[:, 0] - margin
    grown[:, 1] = box[:, 1] + margin
    pts_in, _ = _box_quadrature(box, order)
    pts_probe, _ = _box_quadrature(grown, order)
    outside = np.any((pts_probe < box[:, 0]) | (pts_probe > box[:, 1]), axis=1)
    shell = pts_probe[outside]
    for i, h in enumerate(funcs):
        scale = float(np.max(np.abs(h(pts_in)))) + 1e-300
        leak = float(np.max(np.abs(h(shell)))) if shell.shape[0] else 0.0
        if leak > 1e-9 * scale:
            raise ValueError(f"test function h{i + 1} has support outside the box")


def poisson_moment_identity(h1, h2, h3, box, n_mc: int, seed: int,
                            quad_order: int = 24):
    """Joint characteristic/linear moment of a Poisson point measure, two ways.

    For a unit-intensity Poisson process restricted to the box,
    E{exp(i sum h1(y_p)) * sum h2(y_p) * sum h3(y_p)} equals
    exp(I(e^{i h1}-1)) * (I(e^{i h1} h2 h3) + I(e^{i h1} h2) * I(e^{i h1} h3))
    with I(.) the box integral.  Returns (closed_form, MCEstimate).
    """
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box must be a (d, 2) array of (lo, hi) with hi > lo")
    _check_supports_inside((h1, h2, h3), box, max(8, quad_order // 2))
    pts, w = _box_quadrature(box, quad_order)
    phase = np.exp(1j * np.asarray(h1(pts), dtype=float))
    v2 = np.asarray(h2(pts), dtype=float)
    v3 = np.asarray(h3(pts), dtype=float)
    i_0 = np.sum((phase - 1.0) * w)
    i_23 = np.sum(phase * v2 * v3 * w)
    i_2 = np.sum(phase * v2 * w)
    i_3 = np.sum(phase * v3 * w)
    closed = np.exp(i_0) * (i_23 + i_2 * i_3)

    rng = generator(seed, STREAM_CHECKS)
    volume = float(np.prod(box[:, 1] - box[:, 0]))
    counts = rng.poisson(volume, int(n_mc))
    total = int(counts.sum())
    draws = box[:, 0] + rng.random((total, box.shape[0])) * (box[:, 1] - box[:, 0])
    seg = np.repeat(np.arange(int(n_mc)), counts)
    s1 = np.bincount(seg, weights=np.asarray(h1(draws), dtype=float), minlength=int(n_mc))
    s2 = np.bincount(seg, weights=np.asarray(h2(draws), dtype=float), minlength=int(n_mc))
    s3 = np.bincount(seg, weights=np.asarray(h3(draws), dtype=float), minlength=int(n_mc))
    samples = np.exp(1j * s1) * s2 * s3
    return complex(closed), MCEstimate.from_samples(samples)


def _psd_factor(sigma: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(sigma)
    if vals.min() < -1e-10 * max(1.0, float(vals.max())):
        raise ValueError("covariance matrix is not positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def gaussian_fourth_moment(sigma, sigma2t: float) -> complex:
    """Closed form for E{(e^{iN1}-c)(e^{iN2}-c) N3 N4}, c = exp(-sigma2t/2).

    (N1..N4) are centred jointly Gaussian with covariance `sigma`.  Five-term
    expression; the imaginary part vanishes by the N -> -N symmetry.
    """
    s = np.asarray(sigma, dtype=float)
    if s.shape != (4, 4) or not np.allclose(s, s.T, atol=1e-12):
        raise ValueError("sigma must be a symmetric 4x4 matrix")
    _psd_factor(s)
    c = math.exp(-sigma2t / 2.0)
    e1 = math.exp(-s[0, 0] / 2.0)
    e2 = math.exp(-s[1, 1] / 2.0)
    e12 = math.exp(-(s[0, 0] + s[1, 1]) / 2.0 - s[0, 1])
    out = (s[0, 2] * s[0, 3] * (c * e1 - e12)
           + s[1, 2] * s[1, 3] * (c * e2 - e12)
           - s[1, 2] * s[0, 3] * e12
           - s[0, 2] * s[1, 3] * e12
           + s[2, 3] * (c * c + e12 - c * e1 - c * e2))
    return complex(out)


def gaussian_fourth_moment_mc(sigma, sigma2t: float, n_samples: int, seed: int) -> MCEstimate:
    """Monte Carlo companion of gaussian_fourth_moment (same contract)."""
    s = np.asarray(sigma, dtype=float)
    if s.shape != (4, 4) or not np.allclose(s, s.T, atol=1e-12):
        raise ValueError("sigma must be a symmetric 4x4 matrix")
    factor = _psd_factor(s)
    rng = generator(seed, STREAM_CHECKS, 1)
    c = math.exp(-sigma2t / 2.0)
    draws = rng.standard_normal((int(n_samples), 4)) @ factor.T
    samples = ((np.exp(1j * draws[:, 0]) - c) * (np.exp(1j * draws[:, 1]) - c)
               * draws[:, 2] * draws[:, 3])
    return MCEstimate.from_samples(samples)
