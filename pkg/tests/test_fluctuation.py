"""Fluctuation-law toolkit: limit/finite-scale variances, distribution tests,
rate fits, and the critical- and high-dimension checks."""
import math
from functools import partial

import numpy as np
import pytest

from homfluct.config import ExperimentConfig, InitialConfig, PotentialConfig
from homfluct.corrector import corrector_variance
from homfluct.estimates import MCEstimate
from homfluct.fluctuation import (
    clt_self_calibration,
    clt_test_d3,
    corrected_outer_variance,
    d4_corrector_clt,
    d5_expansion_check,
    pilot_path_count,
    rate_experiment,
    sample_limit_v,
    v_eps_exact_ensemble,
    var_eps,
    var_limit,
)
from homfluct.homogenization import HomogenizedModel, InitialCondition, sigma2, u_hom
from homfluct.random_field import ShapeFunction, SpectrumModel, make_gaussian_field

GAUSS3 = SpectrumModel(dimension=3, amplitude=1.0, width=1.0)
S2_GAUSS3 = sigma2(GAUSS3)
CONST_F = InitialCondition.constant(1.0)
ORIGIN3 = np.zeros(3)


def _closed_var(eps, t, amplitude=1.0, width=1.0, value=1.0, s2=S2_GAUSS3):
    """Hand derivation for a flat initial condition: both Gaussian pair
    integrals collapse, leaving an elementary two-time integral whose value is
    A c^2 e^{-s2 t} (2 pi)^{-3/2} [8 sqrt(t+d) - 4 sqrt(d) - 4 sqrt(2t+d)]
    with d = (eps/width)^2 (d = 0 recovers the limit 4 sqrt(t) (2 - sqrt(2)))."""
    delta = (eps / width) ** 2
    return (amplitude * value * value * math.exp(-s2 * t)
            * (2.0 * math.pi) ** -1.5
            * (8.0 * math.sqrt(t + delta) - 4.0 * math.sqrt(delta)
               - 4.0 * math.sqrt(2.0 * t + delta)))


# ---------------------------------------------------------------------------
# variance quadrature against closed forms and frozen cross-checked values
# ---------------------------------------------------------------------------

def test_var_limit_matches_closed_form_for_flat_initial():
    got = var_limit(GAUSS3, CONST_F, 1.0, ORIGIN3, S2_GAUSS3)
    want = _closed_var(0.0, 1.0)
    # graded product mesh carries ~2e-5 from the sqrt corner at coinciding times
    assert got == pytest.approx(want, rel=5e-5)


def test_var_eps_matches_closed_form_for_flat_initial():
    for eps in (0.4, 0.2, 0.1, 0.05, 0.02):
        got = var_eps(GAUSS3, CONST_F, 1.0, ORIGIN3, S2_GAUSS3, eps)
        # smooth integrand once eps > 0: the mesh is exact to roundoff
        assert got == pytest.approx(_closed_var(eps, 1.0), rel=1e-12)


def test_finite_scale_variance_rises_monotonically_to_limit():
    limit = var_limit(GAUSS3, CONST_F, 1.0, ORIGIN3, S2_GAUSS3)
    ratios = [var_eps(GAUSS3, CONST_F, 1.0, ORIGIN3, S2_GAUSS3, eps) / limit
              for eps in (0.4, 0.2, 0.1, 0.05, 0.02)]
    assert all(r < 1.0 for r in ratios)
    assert all(b > a for a, b in zip(ratios, ratios[1:]))


def test_variance_deficit_is_first_order_in_eps():
    # 1 - var_eps/var_limit = eps / ((2 - sqrt(2)) sqrt(t)) + O(eps^2)
    eps, t = 0.02, 1.0
    limit = var_limit(GAUSS3, CONST_F, t, ORIGIN3, S2_GAUSS3)
    ratio = var_eps(GAUSS3, CONST_F, t, ORIGIN3, S2_GAUSS3, eps) / limit
    normalized = (1.0 - ratio) * (2.0 - math.sqrt(2.0)) * math.sqrt(t) / eps
    assert 0.93 <= normalized <= 1.0


def test_variances_are_linear_in_spectrum_and_quadratic_in_initial():
    double_amp = SpectrumModel(dimension=3, amplitude=2.0, width=1.0)
    assert (var_limit(double_amp, CONST_F, 1.0, ORIGIN3, S2_GAUSS3)
            == pytest.approx(2.0 * var_limit(GAUSS3, CONST_F, 1.0, ORIGIN3,
                                             S2_GAUSS3), rel=1e-9))
    assert (var_eps(double_amp, CONST_F, 1.0, ORIGIN3, S2_GAUSS3, 0.25)
            == pytest.approx(2.0 * var_eps(GAUSS3, CONST_F, 1.0, ORIGIN3,
                                           S2_GAUSS3, 0.25), rel=1e-9))
    f2 = InitialCondition.constant(2.0)
    assert (var_eps(GAUSS3, f2, 1.0, ORIGIN3, S2_GAUSS3, 0.25)
            == pytest.approx(4.0 * var_eps(GAUSS3, CONST_F, 1.0, ORIGIN3,
                                           S2_GAUSS3, 0.25), rel=1e-12))


def test_zero_spectrum_gives_zero_variance():
    silent = SpectrumModel(dimension=3, amplitude=0.0, width=1.0)
    assert var_limit(silent, CONST_F, 1.0, ORIGIN3, S2_GAUSS3) == 0.0
    assert var_eps(silent, CONST_F, 1.0, ORIGIN3, S2_GAUSS3, 0.1) == 0.0


def test_shot_noise_variances_match_frozen_double_quadrature():
    shape = ShapeFunction(dimension=3)
    spec = SpectrumModel(dimension=3, family="poisson_induced", shape=shape)
    s2 = sigma2(spec)
    # frozen from an independent scipy dblquad evaluation (abs agreement ~1e-10)
    assert var_limit(spec, CONST_F, 1.0, ORIGIN3, s2) == pytest.approx(
        0.02618928596, rel=1e-7)
    assert var_eps(spec, CONST_F, 1.0, ORIGIN3, s2, 0.3) == pytest.approx(
        0.0203326842, rel=1e-7)
    assert var_eps(spec, CONST_F, 1.0, ORIGIN3, s2, 0.1) == pytest.approx(
        0.02410872039, rel=1e-7)


def test_bump_initial_variances_match_frozen_double_quadrature():
    f = InitialCondition.bump(center=(0.3, 0.0, -0.2), width=0.8, height=1.5)
    x = np.array([0.5, -0.1, 0.0])
    # frozen from an independent scipy dblquad evaluation; the eps = 0 kernel
    # keeps the sqrt corner, so the limit value carries the ~2e-5 mesh error
    assert var_limit(GAUSS3, f, 1.0, x, S2_GAUSS3) == pytest.approx(
        0.0214809009, rel=5e-5)
    assert var_eps(GAUSS3, f, 1.0, x, S2_GAUSS3, 0.15) == pytest.approx(
        0.0174451114, rel=1e-8)


def test_variance_quadrature_input_guards():
    with pytest.raises(ValueError):
        var_eps(GAUSS3, CONST_F, 1.0, ORIGIN3, S2_GAUSS3, 0.0)
    with pytest.raises(ValueError):
        var_eps(GAUSS3, CONST_F, 1.0, ORIGIN3, S2_GAUSS3, -0.1)
    with pytest.raises(ValueError):
        var_limit(GAUSS3, CONST_F, 0.0, ORIGIN3, S2_GAUSS3)
    spec5 = SpectrumModel(dimension=5, amplitude=1.0, width=1.0)
    with pytest.raises(ValueError):
        var_limit(spec5, CONST_F, 1.0, np.zeros(5), S2_GAUSS3)


# ---------------------------------------------------------------------------
# limit-law sampling and the distribution test
# ---------------------------------------------------------------------------

def test_sample_limit_v_law_and_determinism():
    var = 0.115
    draws = sample_limit_v(var, 100000, seed=7)
    assert np.all(draws.real == 0.0)
    sample_var = draws.imag.var(ddof=1)
    # chi-square se of a variance estimate: var * sqrt(2/n)
    assert abs(sample_var / var - 1.0) <= 4.0 * math.sqrt(2.0 / 100000)
    assert np.array_equal(draws, sample_limit_v(var, 100000, seed=7))
    assert not np.array_equal(draws[:100], sample_limit_v(var, 100, seed=8))
    assert np.all(sample_limit_v(0.0, 50, seed=1) == 0.0)
    with pytest.raises(ValueError):
        sample_limit_v(-1e-9, 10, seed=0)


def test_clt_test_accepts_its_own_law():
    var = 0.11540636
    res = clt_test_d3(sample_limit_v(var, 2000, seed=11), var)
    assert res.sample_size == 2000
    assert res.p_value > 0.01
    assert res.re_null_ok
    assert res.variance == pytest.approx(var, rel=0.15)
    assert abs(res.skewness) < 0.2
    assert f"{var:.10g}" in res.target


def test_clt_test_rejects_a_doubled_variance():
    var = 0.11540636
    draws = sample_limit_v(var, 2000, seed=11) * math.sqrt(2.0)
    res = clt_test_d3(draws, var)
    assert res.p_value < 1e-6


def test_clt_test_flags_a_real_part_shift():
    var = 0.1
    draws = sample_limit_v(var, 2000, seed=3) + 0.05
    noise = np.linspace(-1e-3, 1e-3, 2000)  # nonzero re spread for the se
    res = clt_test_d3(draws + noise, var)
    assert not res.re_null_ok
    assert res.re_mean == pytest.approx(0.05, abs=1e-4)


def test_clt_test_input_guards():
    with pytest.raises(ValueError):
        clt_test_d3(sample_limit_v(0.1, 99, seed=0), 0.1)
    with pytest.raises(ValueError):
        clt_test_d3(sample_limit_v(0.1, 200, seed=0), -0.1)


def test_self_calibration_false_rejection_is_rare():
    assert clt_self_calibration(0.115, n=400, trials=25, seed=17) <= 0.04


# ---------------------------------------------------------------------------
# exact finite-scale ensemble and the noise-corrected outer variance
# ---------------------------------------------------------------------------

def test_exact_ensemble_is_deterministic_and_worker_invariant():
    a = v_eps_exact_ensemble(GAUSS3, 64, 1.0, ORIGIN3, 0.2, S2_GAUSS3,
                             n_omega=8, master_seed=5, workers=1)
    b = v_eps_exact_ensemble(GAUSS3, 64, 1.0, ORIGIN3, 0.2, S2_GAUSS3,
                             n_omega=8, master_seed=5, workers=2)
    assert np.array_equal(a, b)
    assert a.shape == (8,)
    c = v_eps_exact_ensemble(GAUSS3, 64, 1.0, ORIGIN3, 0.2, S2_GAUSS3,
                             n_omega=8, master_seed=6, workers=1)
    assert not np.array_equal(a, c)


def test_exact_ensemble_variance_matches_quadrature():
    eps = 0.1
    draws = v_eps_exact_ensemble(GAUSS3, 512, 1.0, ORIGIN3, eps, S2_GAUSS3,
                                 n_omega=320, master_seed=21, workers=1)
    im = draws.imag
    target = var_eps(GAUSS3, CONST_F, 1.0, ORIGIN3, S2_GAUSS3, eps)
    m2 = float(np.mean(im ** 2))
    se = math.sqrt((np.mean(im ** 4) - m2 ** 2) / im.size)  # moment-based se
    assert abs(m2 - target) <= 4.0 * se
    assert abs(im.mean()) <= 4.0 * im.std(ddof=1) / math.sqrt(im.size)


def test_corrected_outer_variance_removes_the_inner_share():
    rng = np.random.default_rng(9)
    ests = [MCEstimate.from_samples(rng.normal(size=40)
                                    + 1j * rng.normal(loc=rng.normal(), size=40))
            for _ in range(30)]
    got = corrected_outer_variance(ests, n_paths=40)
    means = np.array([e.mean for e in ests])
    inner = np.array([e.variance for e in ests])
    want = np.imag(means).var(ddof=1) - inner.mean() / 40
    assert got == pytest.approx(want, rel=1e-12)
    assert got < np.imag(means).var(ddof=1)
    # a huge inner sample size leaves the raw outer variance untouched
    big = corrected_outer_variance(ests, n_paths=10 ** 12)
    assert big == pytest.approx(np.imag(means).var(ddof=1), rel=1e-6)


def test_pilot_path_count_is_deterministic_and_bounded():
    factory = partial(make_gaussian_field, GAUSS3, 16)
    model = HomogenizedModel(sigma2=S2_GAUSS3, dimension=3, initial=CONST_F)
    u_ref = u_hom(model, 0.5, ORIGIN3)
    n = pilot_path_count(factory, CONST_F, 0.5, ORIGIN3, 0.3, n_omega=16,
                         dt=0.1, u_ref=u_ref, seed=31, workers=1, use_cv=True)
    assert isinstance(n, int)
    assert 16 <= n <= 200000
    assert n == pilot_path_count(factory, CONST_F, 0.5, ORIGIN3, 0.3,
                                 n_omega=16, dt=0.1, u_ref=u_ref, seed=31,
                                 workers=1, use_cv=True)


# ---------------------------------------------------------------------------
# rate experiment
# ---------------------------------------------------------------------------

def _rate_cfg(**overrides):
    base = dict(experiment="rates", dimension=3,
                potential=PotentialConfig(kind="gaussian", amplitude=1.0,
                                          width=1.0, n_modes=16),
                initial=InitialConfig(kind="constant", value=1.0),
                t=0.5, eps_list=(0.4, 0.25, 0.15), n_omega=6, n_paths=12,
                dt=0.1, master_seed=42)
    base.update(overrides)
    return ExperimentConfig(**base)


def test_rate_experiment_rejects_unsupported_setups():
    with pytest.raises(ValueError):
        rate_experiment(_rate_cfg(dimension=6))
    with pytest.raises(ValueError):
        rate_experiment(_rate_cfg(eps_list=(0.4, 0.4, 0.2)))


def test_rate_experiment_zero_potential_is_flagged_invalid():
    cfg = _rate_cfg(potential=PotentialConfig(kind="gaussian", amplitude=0.0,
                                              width=1.0, n_modes=8))
    res = rate_experiment(cfg, workers=1)
    assert not res.valid
    assert res.reason == "potential vanishes: errors are pure inner noise"
    assert math.isnan(res.slope)


def test_rate_experiment_is_invariant_to_eps_ordering():
    a = rate_experiment(_rate_cfg(), workers=1)
    b = rate_experiment(_rate_cfg(eps_list=(0.15, 0.4, 0.25)), workers=1)
    assert np.array_equal(a.table, b.table)
    assert a.slope == b.slope and a.r_squared == b.r_squared
    assert a.nominal_slope == 0.5
    assert not a.log_correction_applied
    assert a.table.shape == (3, 5)
    assert np.array_equal(a.table[:, 0], (0.4, 0.25, 0.15))
    assert np.all(a.table[:, 4] == 12)


def test_rate_experiment_d4_divides_out_the_log_factor():
    cfg = _rate_cfg(dimension=4, eps_list=(0.5, 0.35, 0.25), n_paths=16)
    res = rate_experiment(cfg, workers=1)
    assert res.log_correction_applied
    assert res.nominal_slope == 1.0
    assert res.table.shape == (3, 5)
    assert math.isfinite(res.slope)


# ---------------------------------------------------------------------------
# critical-dimension corrector law
# ---------------------------------------------------------------------------

def test_d4_clt_input_guards():
    with pytest.raises(ValueError):
        d4_corrector_clt(GAUSS3, (0.5,), 50, seed=1)
    spec4 = SpectrumModel(dimension=4, amplitude=1.0, width=1.0)
    with pytest.raises(ValueError):
        d4_corrector_clt(spec4, (1.2,), 50, seed=1)
    with pytest.raises(ValueError):
        d4_corrector_clt(spec4, (), 50, seed=1)


def test_d4_clt_gaussian_trace_matches_quadrature():
    spec4 = SpectrumModel(dimension=4, amplitude=1.0, width=1.0)
    res = d4_corrector_clt(spec4, (0.5, 0.3), n=200, seed=23)
    assert res.trace.shape == (2, 4)
    assert np.array_equal(res.trace[:, 0], (0.5, 0.3))
    for eps, lam, sample_var, quad_scaled in res.trace:
        assert lam == pytest.approx(eps ** 2, rel=1e-15)
        want = corrector_variance(spec4, lam) / abs(math.log(eps))
        assert quad_scaled == pytest.approx(want, rel=1e-12)
        # draws are Gaussian with the matched variance; n = 200 spread
        assert abs(sample_var / quad_scaled - 1.0) <= 4.0 * math.sqrt(2.0 / 199)
    assert res.target_variance == pytest.approx(
        4.0 * spec4.spectrum(0.0) / (2.0 * math.pi) ** 4, rel=1e-15)
    assert res.samples.shape == (200,)
    assert 0.0 <= res.test.p_value <= 1.0


def test_d4_clt_is_deterministic():
    spec4 = SpectrumModel(dimension=4, amplitude=1.0, width=1.0)
    a = d4_corrector_clt(spec4, (0.4,), n=60, seed=5)
    b = d4_corrector_clt(spec4, (0.4,), n=60, seed=5)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.trace, b.trace)
    c = d4_corrector_clt(spec4, (0.4,), n=60, seed=6)
    assert not np.array_equal(a.samples, c.samples)


def test_d4_clt_shot_noise_route_matches_quadrature():
    shape = ShapeFunction(dimension=4)
    spec4 = SpectrumModel(dimension=4, family="poisson_induced", shape=shape)
    res = d4_corrector_clt(spec4, (0.35,), n=400, seed=29)
    r = res.samples
    assert abs(r.mean()) <= 4.0 * r.std(ddof=1) / math.sqrt(r.size)
    m2 = float(np.mean(r ** 2))
    se = math.sqrt((np.mean(r ** 4) - m2 ** 2) / r.size)
    assert abs(m2 - res.trace[0, 3]) <= 4.0 * se
    again = d4_corrector_clt(spec4, (0.35,), n=400, seed=29)
    assert np.array_equal(r, again.samples)


# ---------------------------------------------------------------------------
# high-dimension expansion alignment
# ---------------------------------------------------------------------------

def test_d5_expansion_input_guards():
    with pytest.raises(ValueError):
        d5_expansion_check(GAUSS3, CONST_F, 1.0, ORIGIN3, (0.3, 0.2),
                           n_omega=4, n_paths=8, seed=1)
    shape5 = ShapeFunction(dimension=5)
    pois5 = SpectrumModel(dimension=5, family="poisson_induced", shape=shape5)
    with pytest.raises(ValueError):
        d5_expansion_check(pois5, CONST_F, 1.0, np.zeros(5), (0.3, 0.2),
                           n_omega=4, n_paths=8, seed=1)


def test_d5_expansion_zero_spectrum_is_degenerate():
    silent5 = SpectrumModel(dimension=5, amplitude=0.0, width=1.0)
    res = d5_expansion_check(silent5, CONST_F, 1.0, np.zeros(5), (0.3, 0.2),
                             n_omega=4, n_paths=8, seed=1)
    assert res.degenerate
    assert res.table.shape == (0, 4)


def test_d5_expansion_aligns_with_the_corrector_direction():
    spec5 = SpectrumModel(dimension=5, amplitude=1.0, width=1.0)
    res = d5_expansion_check(spec5, CONST_F, 0.5, np.zeros(5), (0.4, 0.25),
                             n_omega=8, n_paths=24, seed=37, n_modes=64,
                             dt=0.1, workers=1)
    assert not res.degenerate
    assert res.table.shape == (2, 4)
    assert np.array_equal(res.table[:, 0], (0.4, 0.25))
    for _, corr, resid, inner_se in res.table:
        assert 0.5 < corr <= 1.0
        # noise-corrected second moment may clip to zero at tiny ensembles
        assert math.isfinite(resid) and resid >= 0.0
        assert inner_se > 0.0
    again = d5_expansion_check(spec5, CONST_F, 0.5, np.zeros(5), (0.4, 0.25),
                               n_omega=8, n_paths=24, seed=37, n_modes=64,
                               dt=0.1, workers=2)
    assert np.array_equal(res.table, again.table)
