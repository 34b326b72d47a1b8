"""Brownian-path Monte Carlo for the oscillatory-potential semigroup.

The heterogeneous solution is represented as a path average of a unit-modulus
phase, u(t, x) = E_B{ f(x + eps B_{t/eps^2}) exp(i eps int_0^{t/eps^2} V) },
so every estimate is bounded by sup|f| regardless of sample size.  The
module also carries the exact-identity side of the analysis: the corrector
decomposition of the accumulated phase into boundary terms plus a martingale,
the centered-solution representation on the unrescaled time interval, the
Brownian integration-by-parts identity, and the quantitative CLT bound for
time-changed martingales.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from ._parallel import map_indexed
from ._seeds import STREAM_CHECKS, STREAM_FIELDS, STREAM_PATHS, generator, mix
from .corrector import CorrectorEvaluator, sigma_lambda2
from .estimates import MCEstimate
from .random_field import (GaussianFieldRealization, PoissonFieldRealization,
                           SpectrumModel)

_CHUNK_PATH_POINTS = 1 << 21


@dataclass
class BrownianPath:
    """Discrete Brownian increments with deterministic regeneration.

    increments[i] ~ N(0, dt) per coordinate; the path starts at 0 and the
    realized horizon is steps * dt (callers should use it rather than the
    requested horizon, which may differ by up to one step).
    """
    dt: float
    steps: int
    dimension: int
    seed: int
    increments: np.ndarray

    @classmethod
    def generate(cls, dt: float, steps: int, dimension: int, seed: int) -> "BrownianPath":
        if dt <= 0:
            raise ValueError("dt must be positive")
        if steps < 1 or dimension < 1:
            raise ValueError("steps and dimension must be >= 1")
        rng = generator(seed, STREAM_PATHS)
        inc = math.sqrt(dt) * rng.standard_normal((int(steps), int(dimension)))
        return cls(float(dt), int(steps), int(dimension), int(seed), inc)

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    def positions(self, origin=None) -> np.ndarray:
        b = np.vstack([np.zeros((1, self.dimension)),
                       np.cumsum(self.increments, axis=0)])
        if origin is None:
            return b
        return np.asarray(origin, dtype=float) + b

    def endpoint(self) -> np.ndarray:
        return self.increments.sum(axis=0)

    def coarsen(self, factor: int = 2) -> "BrownianPath":
        """Same path on a grid coarsened by an integer factor (for dt studies)."""
        if factor < 1 or self.steps % factor:
            raise ValueError("factor must divide the step count")
        inc = self.increments.reshape(self.steps // factor, factor,
                                      self.dimension).sum(axis=1)
        return BrownianPath(self.dt * factor, self.steps // factor,
                            self.dimension, self.seed, inc)


def simulate_path(t: float, eps: float, dt: float, seed: int,
                  dimension: int = 3, dt_guard: float = 0.1) -> BrownianPath:
    """Brownian path over the diffusively rescaled horizon t/eps^2."""
    if t <= 0 or eps <= 0 or dt <= 0:
        raise ValueError("t, eps and dt must be positive")
    if dt > dt_guard:
        raise ValueError(f"dt={dt} exceeds the guard {dt_guard}; refine the grid")
    steps = max(1, round(t / eps ** 2 / dt))
    return BrownianPath.generate(dt, steps, dimension, seed)


def _stacked_positions(t, eps, dt, seed, dimension, n_paths):
    """Increments for n_paths paths, seeds mix(seed, path_index)."""
    paths = [simulate_path(t, eps, dt, mix(seed, b), dimension)
             for b in range(n_paths)]
    inc = np.stack([p.increments for p in paths])
    steps = paths[0].steps
    b = np.concatenate([np.zeros((n_paths, 1, dimension)),
                        np.cumsum(inc, axis=1)], axis=1)
    return b, steps, paths[0].dt


def u_eps_estimate(field, f, t: float, x, eps: float, n_paths: int,
                   dt: float, seed: int) -> MCEstimate:
    """Inner Monte Carlo of the phase representation for one frozen field."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    samples = np.empty(int(n_paths), dtype=complex)
    done = 0
    while done < n_paths:
        probe_steps = max(1, round(t / eps ** 2 / dt))
        group = max(1, min(n_paths - done, _CHUNK_PATH_POINTS // (probe_steps + 1)))
        b = np.stack([simulate_path(t, eps, dt, mix(seed, done + j), d).increments
                      for j in range(group)])
        b = np.concatenate([np.zeros((group, 1, d)), np.cumsum(b, axis=1)], axis=1)
        v = field.evaluate((x / eps + b).reshape(-1, d)).reshape(group, -1)
        integrals = np.trapezoid(v, dx=dt, axis=1)
        endpoints = x + eps * b[:, -1, :]
        samples[done:done + group] = f(endpoints) * np.exp(1j * eps * integrals)
        done += group
    return MCEstimate.from_samples(samples)


def u_eps_estimate_cv(field, f, t: float, x, eps: float, n_paths: int,
                      dt: float, seed: int) -> MCEstimate:
    """Phase-representation inner Monte Carlo with the linear term removed.

    For a frozen mode-sum field and constant initial data the path average of
    the linearized phase 1 + i eps int V is exact (each cosine mode damps by
    e^{-|k|^2 s/2} under the Brownian average, summed over the trapezoid grid
    in closed form), so only e^{i phi} - 1 - i phi is sampled.  Its variance
    is O((eps int V)^4), roughly the square of the plain estimator's, which
    is what makes small-eps ensembles affordable.
    """
    if not isinstance(field, GaussianFieldRealization):
        raise TypeError("the control variate needs a mode-sum field")
    if getattr(f, "kind", None) != "constant":
        raise ValueError("the linearized control is exact for constant initial data only")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    steps = max(1, round(t / eps ** 2 / dt))
    # trapezoid-weighted geometric sum of per-mode damping over the time grid
    a = np.sum(field.frequencies ** 2, axis=1) * dt / 2.0
    q_end = np.exp(-a * steps)
    small = a <= 1e-10
    inner = np.where(small, float(steps - 1),
                     (np.exp(-np.where(small, 1.0, a)) - q_end)
                     / -np.expm1(-np.where(small, 1.0, a)))
    grid_sum = dt * (0.5 * (1.0 + q_end) + inner)
    args = field.frequencies @ (x / eps) + field.phases
    mean_lin = float(np.sum(field.weights * np.cos(args) * grid_sum))
    base = 1.0 + 1j * eps * mean_lin

    samples = np.empty(int(n_paths), dtype=complex)
    done = 0
    while done < n_paths:
        group = max(1, min(n_paths - done, _CHUNK_PATH_POINTS // (steps + 1)))
        b = np.stack([simulate_path(t, eps, dt, mix(seed, done + j), d).increments
                      for j in range(group)])
        b = np.concatenate([np.zeros((group, 1, d)), np.cumsum(b, axis=1)], axis=1)
        v = field.evaluate((x / eps + b).reshape(-1, d)).reshape(group, -1)
        phi = eps * np.trapezoid(v, dx=dt, axis=1)
        samples[done:done + group] = np.exp(1j * phi) - 1.0 - 1j * phi
        done += group
    return MCEstimate.from_samples(f.value * (base + samples))


@dataclass
class PathFunctionals:
    """Per-path output of the corrector decomposition of the accumulated phase.

    X = eps int V along the path (trapezoid); R collects the resolvent and
    boundary terms; M is the left-point Ito sum; X = R + M up to the tracked
    discrete-Ito residual.  M_tilde adds the linear test direction, QV is its
    discrete bracket, and the two gap components split QV - (|xi|^2 +
    sigma_lambda^2) t into the cross term and the centered-square term.
    """
    X: float
    R: float
    M: float
    QV: float
    M_tilde: float
    qv_gap_cross: float
    qv_gap_resid: float
    ito_residual: float
    horizon: float
    t_macro: float


def field_spectrum(field) -> SpectrumModel:
    """Spectrum model associated with a frozen realization."""
    if isinstance(field, GaussianFieldRealization):
        return field.spectrum
    if isinstance(field, PoissonFieldRealization):
        return SpectrumModel(dimension=field.shape.dimension,
                             family="poisson_induced", shape=field.shape)
    raise TypeError(f"unsupported field type {type(field).__name__}")


def martingale_decomposition(field, ev: CorrectorEvaluator, path: BrownianPath,
                             x, eps: float, xi,
                             sigma_lam2: float | None = None) -> PathFunctionals:
    """Corrector decomposition of one path's accumulated potential."""
    if not math.isclose(ev.lam, eps ** 2, rel_tol=1e-9):
        raise ValueError(f"corrector scale lambda={ev.lam} must equal eps^2={eps**2}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if x.size != path.dimension or xi.size != path.dimension:
        raise ValueError("x and xi must match the path dimension")
    if sigma_lam2 is None:
        sigma_lam2 = sigma_lambda2(field_spectrum(field), ev.lam)
    pos = path.positions(x / eps)
    v, phi, grad = ev.with_field(pos)
    dt = path.dt
    t_macro = eps ** 2 * path.horizon
    X = eps * float(np.trapezoid(v, dx=dt))
    R = eps * (ev.lam * float(np.trapezoid(phi, dx=dt)) - phi[-1] + phi[0])
    M = eps * float(np.sum(grad[:-1] * path.increments))
    M_tilde = eps * float(xi @ path.increments.sum(axis=0)) + M
    grad_left = grad[:-1]
    qv = eps ** 2 * float(np.sum((xi + grad_left) ** 2)) * dt
    cross = 2.0 * eps ** 2 * float(np.sum(grad_left @ xi)) * dt
    resid = eps ** 2 * float(np.sum(grad_left ** 2)) * dt - sigma_lam2 * t_macro
    return PathFunctionals(X=X, R=R, M=M, QV=qv, M_tilde=M_tilde,
                           qv_gap_cross=cross, qv_gap_resid=resid,
                           ito_residual=X - R - M,
                           horizon=path.horizon, t_macro=t_macro)


def v_eps_estimate(field, f, t: float, x, eps: float, sigma2: float,
                   n_paths: int, dt: float, seed: int) -> MCEstimate:
    """Monte Carlo of the centered-solution representation on unrescaled time.

    Paths live on [0, t]; the field is sampled along (x + B_s)/eps and the
    result carries the d = 3 amplification eps^{-3/2}.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != 3:
        raise ValueError("the eps^(-3/2) normalization is specific to dimension 3")
    if n_paths < 1 or t <= 0 or eps <= 0 or dt <= 0:
        raise ValueError("t, eps, dt must be positive and n_paths >= 1")
    steps = max(1, round(t / dt))
    samples = np.empty(int(n_paths), dtype=complex)
    done = 0
    while done < n_paths:
        group = max(1, min(n_paths - done, _CHUNK_PATH_POINTS // (steps + 1)))
        b = np.stack([BrownianPath.generate(dt, steps, 3, mix(seed, done + j)).increments
                      for j in range(group)])
        b = np.concatenate([np.zeros((group, 1, 3)), np.cumsum(b, axis=1)], axis=1)
        v = field.evaluate(((x + b) / eps).reshape(-1, 3)).reshape(group, -1)
        integrals = np.trapezoid(v, dx=dt, axis=1)
        endpoints = x + b[:, -1, :]
        samples[done:done + group] = (f(endpoints) * math.exp(-sigma2 * t / 2.0)
                                      * 1j * eps ** -1.5 * integrals)
        done += group
    return MCEstimate.from_samples(samples)


def v_eps_exact_constant_initial(field: GaussianFieldRealization, t: float, x,
                                 eps: float, sigma2: float) -> complex:
    """Path expectation of the centered representation for f = 1, in closed form.

    For a fixed mode-sum realization the Brownian average of each cosine mode
    is explicit (E e^{i k . B_s} = e^{-|k|^2 s/2}), so the inner Monte Carlo
    can be replaced by its exact value; only field randomness remains.  This
    makes fluctuation ensembles at small eps affordable: the path-sampling
    route costs O(t/dt) field evaluations per path with an eps^{-3/2}
    amplification of the inner noise, which is prohibitive exactly where the
    theory is interesting.
    """
    if not isinstance(field, GaussianFieldRealization):
        raise TypeError("the closed-form path average needs a mode-sum field")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != 3 or field.spectrum.dimension != 3:
        raise ValueError("the eps^(-3/2) normalization is specific to dimension 3")
    if t <= 0 or eps <= 0:
        raise ValueError("t and eps must be positive")
    kappa = np.sum(field.frequencies ** 2, axis=1) / (2.0 * eps ** 2)
    kt = kappa * t
    damp = np.where(kt > 1e-8, -np.expm1(-kt) / np.where(kappa > 0, kappa, 1.0),
                    t * (1.0 - 0.5 * kt))
    args = field.frequencies @ (x / eps) + field.phases
    acc = float(np.sum(field.weights * np.cos(args) * damp))
    return 1j * math.exp(-sigma2 * t / 2.0) * eps ** -1.5 * acc


def malliavin_duality_check(f_pair, g, t: float, n_samples: int, seed: int,
                            dimension: int = 3,
                            steps: int = 800) -> tuple[float, float, float]:
    """Both sides of the Brownian integration-by-parts identity
    sum_k E{f(B_t) int g_k dB^k} = sum_k E{d_k f(B_t) int g_k ds},
    on common paths; returns (lhs, rhs, 95% half-width of the difference)."""
    f, grad_f = f_pair
    if t <= 0 or n_samples < 2:
        raise ValueError("need t > 0 and n_samples >= 2")
    dt = t / steps
    lhs = np.empty(int(n_samples))
    rhs = np.empty(int(n_samples))
    done = 0
    chunk_index = 0
    group0 = max(1, _CHUNK_PATH_POINTS // (steps + 1))
    while done < n_samples:
        group = min(int(n_samples) - done, group0)
        rng = generator(seed, STREAM_CHECKS, 3, chunk_index)
        inc = math.sqrt(dt) * rng.standard_normal((group, steps, dimension))
        pos = np.concatenate([np.zeros((group, 1, dimension)),
                              np.cumsum(inc, axis=1)], axis=1)
        gv = g(pos.reshape(-1, dimension)).reshape(group, steps + 1, dimension)
        end = pos[:, -1, :]
        lhs[done:done + group] = f(end) * np.sum(gv[:, :-1, :] * inc, axis=(1, 2))
        rhs[done:done + group] = np.sum(grad_f(end)
                                        * np.trapezoid(gv, dx=dt, axis=1), axis=1)
        done += group
        chunk_index += 1
    diff = lhs - rhs
    ci = 1.96 * diff.std(ddof=1) / math.sqrt(n_samples)
    return float(lhs.mean()), float(rhs.mean()), float(ci)


@dataclass
class MCLTRow:
    name: str
    lhs: float    # |E{f(M_1) - f(W_1) - f''(M_tau)(<M>_1 - 1)/2}|
    rhs: float    # E |<M>_1 - 1|^{3/2}
    ratio: float


def standard_qv_profiles(deltas=(0.05, 0.1, 0.2)) -> dict:
    """Named bracket profiles: flat, deterministic shifts, random perturbation."""
    profiles = {"flat": lambda rng, n, s: np.broadcast_to(s, (n, s.size)).copy()}
    for d in deltas:
        profiles[f"shift_{d:g}"] = partial(_shifted_profile, 1.0 + d)
    profiles["random_pm0.1"] = _random_profile
    return profiles


def _shifted_profile(scale, rng, n, s):
    return np.broadcast_to(scale * s, (n, s.size)).copy()


def _random_profile(rng, n, s):
    v = 1.0 + 0.1 * (rng.random(n) - 0.5)
    return v[:, None] * s[None, :]


def mclt_bound_check(qv_profiles: dict, n_samples: int, seed: int,
                     f_pair=None, n_grid: int = 128) -> list[MCLTRow]:
    """Empirical two-sided data for the quantitative martingale CLT bound.

    Martingales are realized as time-changed Brownian motions M_s = W_{<M>_s};
    tau = sup{s : <M>_s <= 1} is located on the discrete grid with the
    left-continuous convention, and (W_{<M>_tau}, W_{<M>_1}, W_1) are sampled
    jointly from one underlying Brownian motion per draw.
    """
    if f_pair is None:
        f_pair = (lambda z: np.exp(1j * z), lambda z: -np.exp(1j * z))
    f, f2 = f_pair
    s_grid = np.linspace(0.0, 1.0, n_grid + 1)
    rows = []
    for p_index, (name, profile) in enumerate(qv_profiles.items()):
        rng = generator(seed, STREAM_CHECKS, 4, p_index)
        qv = np.asarray(profile(rng, int(n_samples), s_grid), dtype=float)
        if np.any(np.diff(qv, axis=1) < -1e-12):
            raise ValueError(f"bracket profile '{name}' is not nondecreasing")
        idx = np.maximum(np.sum(qv <= 1.0, axis=1) - 1, 0)
        a = qv[np.arange(qv.shape[0]), idx]         # <M>_tau
        b = qv[:, -1]                               # <M>_1
        ones = np.ones_like(b)
        times = np.stack([a, b, ones], axis=1)
        order = np.argsort(times, axis=1, kind="stable")
        sorted_t = np.take_along_axis(times, order, axis=1)
        z = rng.standard_normal(times.shape)
        gaps = np.diff(np.concatenate([np.zeros((times.shape[0], 1)), sorted_t],
                                      axis=1), axis=1)
        w_sorted = np.cumsum(np.sqrt(np.maximum(gaps, 0.0)) * z, axis=1)
        w = np.empty_like(w_sorted)
        np.put_along_axis(w, order, w_sorted, axis=1)
        w_a, w_b, w_1 = w[:, 0], w[:, 1], w[:, 2]
        lhs_samples = f(w_b) - f(w_1) - 0.5 * f2(w_a) * (b - 1.0)
        lhs = abs(np.mean(lhs_samples))
        rhs = float(np.mean(np.abs(b - 1.0) ** 1.5))
        if rhs > 0:
            ratio = lhs / rhs
        else:
            ratio = 0.0 if lhs < 1e-12 else math.inf
        rows.append(MCLTRow(name=name, lhs=float(lhs), rhs=rhs, ratio=float(ratio)))
    return rows


def adaptive_path_count(pilot_variance: float, target_scale: float,
                        n_min: int = 16, n_max: int = 200000) -> int:
    """Smallest inner sample size keeping the inner standard error at or
    below a third of the fluctuation scale being resolved."""
    if target_scale <= 0:
        raise ValueError("target_scale must be positive")
    n = math.ceil(9.0 * max(pilot_variance, 0.0) / target_scale ** 2)
    return int(min(n_max, max(n_min, n)))


def default_path_dt(correlation_scale: float) -> float:
    """Default rescaled-time step: resolves the field correlation scale."""
    return min(0.05, correlation_scale ** 2 / 20.0)


# ---------------------------------------------------------------------------
# ensemble drivers (outer loop over frozen field realizations)
# ---------------------------------------------------------------------------

def _u_eps_one(field_factory, f, t, x, eps, n_paths, dt, master_seed, use_cv,
               omega):
    field = field_factory(mix(master_seed, STREAM_FIELDS, omega))
    inner = u_eps_estimate_cv if use_cv else u_eps_estimate
    return inner(field, f, t, x, eps, n_paths, dt,
                 mix(master_seed, STREAM_PATHS, omega))


def u_eps_ensemble(field_factory, f, t, x, eps, n_omega: int, n_paths: int,
                   dt: float, master_seed: int, workers=None,
                   use_cv: bool = False) -> list[MCEstimate]:
    """Per-realization inner estimates, one frozen field per outer index.

    use_cv switches to the linearized-control estimator (mode-sum field and
    constant initial data only); the estimand is identical.
    """
    task = partial(_u_eps_one, field_factory, f, t, x, eps, n_paths, dt,
                   master_seed, use_cv)
    return map_indexed(task, int(n_omega), workers)


def _v_eps_one(field_factory, f, t, x, eps, sigma2, n_paths, dt, master_seed, omega):
    field = field_factory(mix(master_seed, STREAM_FIELDS, omega))
    return v_eps_estimate(field, f, t, x, eps, sigma2, n_paths, dt,
                          mix(master_seed, STREAM_PATHS, omega))


def v_eps_ensemble(field_factory, f, t, x, eps, sigma2, n_omega: int,
                   n_paths: int, dt: float, master_seed: int,
                   workers=None) -> list[MCEstimate]:
    task = partial(_v_eps_one, field_factory, f, t, x, eps, sigma2, n_paths, dt,
                   master_seed)
    return map_indexed(task, int(n_omega), workers)


def _decomposition_one(field_factory, t, x, eps, xi, n_paths, dt, master_seed, omega):
    field = field_factory(mix(master_seed, STREAM_FIELDS, omega))
    ev = CorrectorEvaluator(field, eps ** 2)
    s_lam2 = sigma_lambda2(field_spectrum(field), eps ** 2)
    seed = mix(master_seed, STREAM_PATHS, omega)
    out = []
    for b in range(n_paths):
        path = simulate_path(t, eps, dt, mix(seed, b), dimension=len(xi))
        out.append(martingale_decomposition(field, ev, path, x, eps, xi, s_lam2))
    return out


def decomposition_ensemble(field_factory, t, x, eps, xi, n_omega: int,
                           n_paths: int, dt: float, master_seed: int,
                           workers=None) -> list[PathFunctionals]:
    """Flat list of per-(realization, path) decompositions, index-ordered."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    task = partial(_decomposition_one, field_factory, t, x, eps, xi,
                   int(n_paths), dt, master_seed)
    nested = map_indexed(task, int(n_omega), workers)
    return [pf for group in nested for pf in group]


def pooled(estimates: list[MCEstimate]) -> MCEstimate:
    """Associative merge of inner estimates in index order."""
    if not estimates:
        raise ValueError("nothing to pool")
    acc = estimates[0]
    for e in estimates[1:]:
        acc = acc.merge(e)
    return acc
