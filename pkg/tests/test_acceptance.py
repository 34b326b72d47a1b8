"""Acceptance gate: twelve numbered criteria, one test per criterion.

Test names carry their criterion number, so `pytest -v` prints one pass/fail
line per criterion.  Every numeric target and tolerance is asserted exactly
as stated; where a pinned target disagrees with what the implemented
quadratures demonstrably converge to, the test still asserts the pinned
number and fails honestly (see README "Known red checks" for the analysis).
All randomness descends from one fixed master seed, so outcomes are
reproducible byte for byte.
"""
import math
import time
from functools import partial

import numpy as np
import pytest

from homfluct._seeds import STREAM_FIELDS, STREAM_PATHS, mix
from homfluct.cli import main
from homfluct.config import ExperimentConfig, InitialConfig, PotentialConfig
from homfluct.corrector import (CorrectorEvaluator, corrector_variance,
                                d4_log_asymptotics,
                                make_corrector_matched_field)
from homfluct.feynman_kac import (BrownianPath, decomposition_ensemble,
                                  malliavin_duality_check,
                                  martingale_decomposition, mclt_bound_check,
                                  standard_qv_profiles)
from homfluct.fluctuation import (clt_self_calibration, clt_test_d3,
                                  d4_corrector_clt, d5_expansion_check,
                                  rate_experiment, v_eps_exact_ensemble,
                                  var_eps, var_limit)
from homfluct.homogenization import InitialCondition, sigma2
from homfluct.random_field import (SpectrumModel, gaussian_fourth_moment,
                                   gaussian_fourth_moment_mc,
                                   make_gaussian_field,
                                   poisson_moment_identity)

MASTER = 20260815

GAUSS3 = SpectrumModel(dimension=3, amplitude=1.0, width=1.0)
GAUSS4 = SpectrumModel(dimension=4, amplitude=1.0, width=1.0)
GAUSS5 = SpectrumModel(dimension=5, amplitude=1.0, width=1.0)
# wide, weak potential: reaches the asymptotic corrector regime at eps <= 0.4
WIDE3 = SpectrumModel(dimension=3, amplitude=0.3, width=3.0)
CONST = InitialCondition.constant(1.0)
ORIGIN3 = np.zeros(3)


def test_criterion_01_effective_constant_closed_form():
    t0 = time.monotonic()
    target = 2.0 * math.sqrt(math.pi / 2.0) / math.pi ** 2
    got = sigma2(GAUSS3)
    assert abs(got / target - 1.0) <= 1e-6, f"sigma2 {got} vs {target}"
    assert time.monotonic() - t0 < 1.0


def test_criterion_02_corrector_variance_quadrature_vs_ensemble():
    t0 = time.monotonic()
    lam, n = 1e-2, 10000
    seed = mix(MASTER, 2)
    draws = np.empty(n)
    for i in range(n):
        fld = make_corrector_matched_field(GAUSS3, lam, 4096, mix(seed, i))
        denom = lam + 0.5 * np.sum(fld.frequencies ** 2, axis=1)
        draws[i] = float(np.sum(fld.weights * np.cos(fld.phases) / denom))
    quad = corrector_variance(GAUSS3, lam)
    m2 = float(np.mean(draws ** 2))
    # moment-based standard error of the second moment (no normality assumed)
    se = math.sqrt((float(np.mean(draws ** 4)) - m2 ** 2) / n)
    assert abs(m2 - quad) <= 4.0 * se, (
        f"ensemble {m2:.6g} vs quadrature {quad:.6g}, se {se:.3g}")
    assert time.monotonic() - t0 < 60.0


def test_criterion_03_d4_log_asymptote_reaches_pinned_limit():
    t0 = time.monotonic()
    lams = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
    table = d4_log_asymptotics(GAUSS4, lams)
    pinned = 2.0 / (2.0 * math.pi) ** 4
    final = table.ratios[-1]
    assert abs(final / pinned - 1.0) <= 0.20, (
        f"ratio at lambda=1e-8 is {final:.8g}, pinned limit {pinned:.8g}, "
        f"relative gap {abs(final / pinned - 1.0):.3f}")
    gaps = [abs(r - pinned) for r in table.ratios]
    assert all(b < a for a, b in zip(gaps, gaps[1:])), (
        f"sequence {list(table.ratios)} must approach {pinned:.8g} monotonically")
    assert time.monotonic() - t0 < 10.0


def _bump_profile(radius, coef):
    def h(pts):
        r2 = np.sum(pts ** 2, axis=1) / radius ** 2
        out = np.zeros(len(pts))
        m = r2 < 1.0
        out[m] = coef * np.exp(-1.0 / (1.0 - r2[m]))
        return out
    return h


def test_criterion_04_exact_identity_suite():
    t0 = time.monotonic()
    box = np.array([[-1.5, 1.5]] * 3)
    closed, mc = poisson_moment_identity(_bump_profile(1.2, 1.0),
                                         _bump_profile(1.0, 0.8),
                                         _bump_profile(1.4, -0.6),
                                         box, 200000, mix(MASTER, 4, 1))
    assert abs(mc.mean - closed) <= 4.0 * mc.std_err, (
        f"third moment {mc.mean:.6g} vs closed {closed:.6g}")

    cov = np.array([[1.0, 0.3, 0.2, 0.1],
                    [0.3, 0.8, 0.15, 0.25],
                    [0.2, 0.15, 0.9, 0.3],
                    [0.1, 0.25, 0.3, 1.1]])
    closed4 = gaussian_fourth_moment(cov, 0.7)
    mc4 = gaussian_fourth_moment_mc(cov, 0.7, 400000, mix(MASTER, 4, 2))
    assert abs(mc4.mean - closed4) <= 4.0 * mc4.std_err, (
        f"fourth moment {mc4.mean:.6g} vs closed {closed4:.6g}")

    f_pair = (lambda b: b[:, 0],
              lambda b: np.tile([1.0, 0.0, 0.0], (len(b), 1)))
    lhs, rhs, ci = malliavin_duality_check(f_pair, lambda p: np.ones_like(p),
                                           1.0, 100000, mix(MASTER, 4, 3))
    assert abs(lhs - rhs) <= 4.0 * ci / 1.96, (
        f"duality pairing {lhs:.6g} vs {rhs:.6g}")
    assert time.monotonic() - t0 < 300.0


def test_criterion_05_quantitative_martingale_clt_bound():
    t0 = time.monotonic()
    rows = mclt_bound_check(standard_qv_profiles(), 200000, mix(MASTER, 5))
    flat = next(r for r in rows if r.name == "flat")
    # a deterministic unit bracket makes every per-draw term vanish, so the
    # estimator sits at exactly zero: below any multiple of the noise floor
    assert flat.lhs == 0.0
    ratios = {r.name: r.ratio for r in rows if r.rhs > 0}
    assert ratios, "profile family must include perturbed brackets"
    assert max(ratios.values()) <= 2.0, f"ratios {ratios}"
    assert time.monotonic() - t0 < 120.0


def test_criterion_06_decomposition_residual_orders():
    t0 = time.monotonic()
    # (a) per-path discrete-Ito residual under three 4x time refinements
    n, eps = 256, 0.4
    seed = mix(MASTER, 6)
    rms = {16: 0.0, 4: 0.0, 1: 0.0}
    for w in range(n):
        field = make_gaussian_field(GAUSS3, 32, mix(seed, STREAM_FIELDS, w))
        ev = CorrectorEvaluator(field, eps ** 2)
        fine = BrownianPath.generate(0.003125, 1024, 3,
                                     mix(seed, STREAM_PATHS, w))
        for factor in rms:
            path = fine.coarsen(factor) if factor > 1 else fine
            pf = martingale_decomposition(field, ev, path, ORIGIN3, eps,
                                          ORIGIN3)
            rms[factor] += pf.ito_residual ** 2
    levels = [math.sqrt(rms[f] / n) for f in (16, 4, 1)]
    order = math.log(levels[0] / levels[2]) / math.log(16.0)
    assert order >= 0.5, (
        f"observed refinement order {order:.4f} (rms levels {levels})")

    # (b) ensemble E|R|^2 against eps: log-log slope near the first-order law
    factory = partial(make_gaussian_field, WIDE3, 64)
    eps_grid = (0.4, 0.2, 0.1)
    second_moments = []
    for k, e in enumerate(eps_grid):
        pfs = decomposition_ensemble(factory, 1.0, ORIGIN3, e, ORIGIN3,
                                     200, 200, 0.05, mix(MASTER, 6, k))
        second_moments.append(float(np.mean([pf.R ** 2 for pf in pfs])))
    slope = float(np.polyfit(np.log(eps_grid), np.log(second_moments), 1)[0])
    assert 0.7 <= slope <= 1.3, (
        f"E|R|^2 slope {slope:.4f} from {second_moments}")
    assert time.monotonic() - t0 < 1800.0


def test_criterion_07_error_decay_rates_d3_and_d5():
    t0 = time.monotonic()
    cfg3 = ExperimentConfig(
        experiment="rates", dimension=3,
        potential=PotentialConfig(kind="gaussian", amplitude=0.3, width=3.0,
                                  n_modes=256),
        initial=InitialConfig(kind="constant", value=1.0),
        t=1.0, eps_list=(0.4, 0.2, 0.1), n_omega=256, n_paths=0, dt=0.05,
        master_seed=mix(MASTER, 7))
    res3 = rate_experiment(cfg3)
    assert res3.valid, res3.reason
    assert 0.35 <= res3.slope <= 0.65, f"d3 slope {res3.slope:.4f}"
    assert res3.r_squared >= 0.9, f"d3 r^2 {res3.r_squared:.4f}"

    cfg5 = ExperimentConfig(
        experiment="rates", dimension=5,
        potential=PotentialConfig(kind="gaussian", amplitude=1.0, width=1.0,
                                  n_modes=256),
        initial=InitialConfig(kind="constant", value=1.0),
        t=1.0, eps_list=(0.4, 0.2, 0.1), n_omega=128, n_paths=0, dt=0.05,
        master_seed=mix(MASTER, 7, 5))
    res5 = rate_experiment(cfg5)
    assert res5.valid, res5.reason
    assert 0.75 <= res5.slope <= 1.25, f"d5 slope {res5.slope:.4f}"
    assert time.monotonic() - t0 < 7200.0


def test_criterion_08_finite_scale_variance_window():
    t0 = time.monotonic()
    s2 = sigma2(GAUSS3)
    draws = v_eps_exact_ensemble(GAUSS3, 512, 1.0, ORIGIN3, 0.1, s2,
                                 3200, mix(MASTER, 8))
    target = var_eps(GAUSS3, CONST, 1.0, ORIGIN3, s2, 0.1)
    sample_var = float(draws.imag.var(ddof=1))
    assert abs(sample_var / target - 1.0) <= 0.10, (
        f"ensemble variance {sample_var:.6g} vs quadrature {target:.6g}")

    ratio = (var_eps(GAUSS3, CONST, 1.0, ORIGIN3, s2, 0.05)
             / var_limit(GAUSS3, CONST, 1.0, ORIGIN3, s2))
    assert 0.95 <= ratio <= 1.05, (
        f"var_eps(0.05)/var_limit = {ratio:.5f}; the deficit is first order "
        f"in eps, about 1.707*eps = {1.707 * 0.05:.4f} here")
    assert time.monotonic() - t0 < 3600.0


def test_criterion_09_d3_central_limit_ks_and_calibration():
    t0 = time.monotonic()
    s2 = sigma2(GAUSS3)
    ve = var_eps(GAUSS3, CONST, 1.0, ORIGIN3, s2, 0.1)
    draws = v_eps_exact_ensemble(GAUSS3, 4096, 1.0, ORIGIN3, 0.1, s2,
                                 2000, mix(MASTER, 9))
    res = clt_test_d3(draws, ve)
    assert res.p_value > 0.01, (
        f"KS p={res.p_value:.4g} (stat {res.ks_statistic:.4f}, "
        f"sample variance {res.variance:.6g} vs {ve:.6g})")
    assert res.re_null_ok, f"real-part mean {res.re_mean:.3g} off zero"
    calib = clt_self_calibration(ve, 2000, 100, mix(MASTER, 9, 1))
    assert calib <= 0.02, f"false-rejection rate {calib:.3f}"
    assert time.monotonic() - t0 < 3600.0


def test_criterion_10_d4_rescaled_corrector_law():
    t0 = time.monotonic()
    res = d4_corrector_clt(GAUSS4, (1e-3,), 5000, mix(MASTER, 10))
    assert res.test.p_value > 0.01, (
        f"KS p={res.test.p_value:.3g}: sample variance {res.test.variance:.6g} "
        f"vs pinned target {res.target_variance:.6g}")
    assert time.monotonic() - t0 < 600.0


def test_criterion_11_d5_expansion_alignment():
    t0 = time.monotonic()
    res = d5_expansion_check(GAUSS5, CONST, 1.0, np.zeros(5), (0.2, 0.1),
                             n_omega=128, n_paths=0, seed=mix(MASTER, 11),
                             n_modes=256, dt=0.05)
    assert not res.degenerate
    (e_a, corr_a, resid_a, _), (e_b, corr_b, resid_b, _) = res.table
    assert (e_a, e_b) == (0.2, 0.1)
    assert corr_b >= corr_a - 0.05, f"correlation fell {corr_a:.5f} -> {corr_b:.5f}"
    assert resid_b < resid_a, (
        f"residual/eps must decrease: {resid_a:.6g} -> {resid_b:.6g}")
    assert time.monotonic() - t0 < 14400.0


def test_criterion_12_worker_count_invariance(tmp_path):
    cfgfile = tmp_path / "tiny.cfg"
    cfgfile.write_text("potential.n_modes = 8\nn_omega = 4\nn_paths = 6\n"
                       "dt = 0.1\nt = 0.5\neps_list = 0.4 0.3 0.2\n"
                       f"master_seed = {MASTER}\n")
    blobs = {}
    for sub in ("simulate", "rates"):
        for workers in ("1", "2"):
            out = tmp_path / f"{sub}-{workers}"
            code = main([sub, "--config", str(cfgfile), "--out", str(out),
                         "--workers", workers])
            assert code == 0
            csv = out / f"{sub}.csv"
            blobs.setdefault(sub, []).append(csv.read_bytes())
    for sub, (one, two) in blobs.items():
        assert one == two, f"{sub}.csv differs across worker counts"
