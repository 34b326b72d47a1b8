"""Command line orchestration: subcommand dispatch, seeding, persistence.

Every run writes a JSON summary, CSV output where the experiment produces
tabular data, one PNG figure, and a manifest echoing the config together
with content hashes of all outputs.  Output bytes are a pure function of
(config, master seed); the worker count only changes wall time.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import report
from ._seeds import STREAM_FIELDS, STREAM_LAW, mix
from .config import (EXPERIMENTS, ExperimentConfig, correlation_scale,
                     make_field_factory, make_initial, make_spectrum,
                     parse_config, resolved_dt, serialize_config,
                     with_experiment)
from .corrector import (corrector_variance, d4_log_asymptotics, sigma_lambda2,
                        stationary_corrector_exists)
from .feynman_kac import (malliavin_duality_check, mclt_bound_check,
                          standard_qv_profiles, u_eps_ensemble)
from .fluctuation import (clt_test_d3, d4_corrector_clt, pilot_path_count,
                          rate_experiment, v_eps_exact_ensemble, var_eps,
                          var_limit)
from .homogenization import HomogenizedModel, sigma2, u_hom
from .random_field import (gaussian_fourth_moment, gaussian_fourth_moment_mc,
                           poisson_moment_identity)

_FLOAT = "%.17g"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID_RUN = 3


# ---------------------------------------------------------------------------
# persistence helpers
# ---------------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _FLOAT % float(v)
    return str(v)


def write_csv(path: str, header: list[str], rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_json(path: str, obj: dict) -> str:
    with open(path, "w", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir: str, cfg: ExperimentConfig, files: list[str]) -> str:
    manifest = {
        "config": serialize_config(cfg),
        "outputs": {os.path.basename(p): _sha256(p) for p in sorted(files)},
    }
    return write_json(os.path.join(out_dir, "manifest.json"), manifest)


# ---------------------------------------------------------------------------
# experiment runners: each returns (exit_code, summary, figure_payload, files)
# ---------------------------------------------------------------------------

def _run_field_sample(cfg, out_dir, workers):
    spec = make_spectrum(cfg)
    field = make_field_factory(cfg)(mix(cfg.master_seed, STREAM_FIELDS, 0))
    seg = cfg.segment
    if len(seg.start) == cfg.dimension and len(seg.end) == cfg.dimension:
        start = np.asarray(seg.start, dtype=float)
        end = np.asarray(seg.end, dtype=float)
    else:
        start = np.zeros(cfg.dimension)
        end = np.zeros(cfg.dimension)
        end[0] = 10.0 * correlation_scale(cfg)
    frac = np.linspace(0.0, 1.0, seg.n)
    pts = start[None, :] + frac[:, None] * (end - start)[None, :]
    values = field.evaluate(pts)
    arc = frac * float(np.linalg.norm(end - start))
    rows = [(arc[i], *pts[i], values[i]) for i in range(seg.n)]
    header = ["arc"] + [f"x{j + 1}" for j in range(cfg.dimension)] + ["value"]
    files = [write_csv(os.path.join(out_dir, "field_sample.csv"), header, rows)]
    summary = {
        "sample_mean": float(values.mean()),
        "sample_variance": float(values.var(ddof=1)),
        "covariance_at_zero": float(spec.covariance_radial(0.0)),
        "n_points": seg.n,
    }
    return EXIT_OK, summary, {"arc": arc, "values": values}, files


def _run_sigma2(cfg, out_dir, workers):
    spec = make_spectrum(cfg)
    s2 = sigma2(spec)
    k = np.linspace(0.0, spec.spectral_cutoff(), 256)
    sv = np.asarray(spec.spectrum(k))
    rows = [("sigma2", s2),
            ("spectrum_at_zero", float(spec.spectrum(0.0))),
            ("spectrum_total", spec.spectrum_total())]
    files = [write_csv(os.path.join(out_dir, "sigma2.csv"),
                       ["quantity", "value"], rows)]
    summary = {r[0]: r[1] for r in rows}
    summary["dimension"] = cfg.dimension
    payload = {"k_grid": k, "spectrum_values": sv, "sigma2": s2}
    return EXIT_OK, summary, payload, files


def _run_corrector(cfg, out_dir, workers):
    spec = make_spectrum(cfg)
    lams = tuple(sorted(cfg.lambda_list, reverse=True))
    var = [corrector_variance(spec, lam) for lam in lams]
    dir_energy = [sigma_lambda2(spec, lam) for lam in lams]
    header = ["lambda", "second_moment", "dirichlet_energy"]
    ratios = None
    rows = list(zip(lams, var, dir_energy))
    if cfg.dimension == 4:
        table = d4_log_asymptotics(spec, lams)
        ratios = list(table.ratios)
        header.append("moment_over_log")
        rows = [r + (ratios[i],) for i, r in enumerate(rows)]
    files = [write_csv(os.path.join(out_dir, "corrector.csv"), header, rows)]
    exists, diag = stationary_corrector_exists(spec)
    summary = {
        "stationary_corrector_exists": exists,
        "stationary_second_moment": diag if math.isfinite(diag) else "inf",
        "effective_constant": sigma2(spec),
        "lambda_list": list(lams),
    }
    payload = {"lambdas": lams, "variances": var, "ratios": ratios}
    return EXIT_OK, summary, payload, files


def _run_simulate(cfg, out_dir, workers):
    spec = make_spectrum(cfg)
    f = make_initial(cfg)
    x = cfg.point()
    dt = resolved_dt(cfg)
    s2 = sigma2(spec)
    model = HomogenizedModel(sigma2=s2, dimension=cfg.dimension, initial=f)
    u_ref = u_hom(model, cfg.t, x)
    factory = make_field_factory(cfg)
    rows = []
    clouds = {}
    per_eps = {}
    for k, eps in enumerate(sorted(set(cfg.eps_list), reverse=True)):
        seed_eps = mix(cfg.master_seed, k)
        n_b = cfg.n_paths or pilot_path_count(factory, f, cfg.t, x, eps,
                                              cfg.n_omega, dt, u_ref,
                                              mix(seed_eps, 1), workers)
        ests = u_eps_ensemble(factory, f, cfg.t, x, eps, cfg.n_omega, n_b, dt,
                              seed_eps, workers)
        block = np.array([[e.mean.real, e.mean.imag] for e in ests])
        clouds[eps] = block
        rows.extend((eps, i, e.mean.real, e.mean.imag, n_b, e.ci)
                    for i, e in enumerate(ests))
        per_eps[f"{eps:.17g}"] = {
            "ensemble_mean_re": float(block[:, 0].mean()),
            "ensemble_mean_im": float(block[:, 1].mean()),
            "mean_abs_err": float(np.mean(np.abs(block[:, 0] + 1j * block[:, 1]
                                                 - u_ref))),
            "n_paths": n_b,
        }
    files = [write_csv(os.path.join(out_dir, "simulate.csv"),
                       ["epsilon", "omega_index", "re_u_eps", "im_u_eps",
                        "n_paths", "inner_ci"], rows)]
    summary = {"u_hom": u_ref, "per_eps": per_eps, "n_omega": cfg.n_omega}
    return EXIT_OK, summary, {"clouds": clouds, "u_hom": u_ref}, files


def _run_rates(cfg, out_dir, workers):
    res = rate_experiment(cfg, workers)
    files = [write_csv(os.path.join(out_dir, "rates.csv"),
                       ["epsilon", "mean_abs_err", "std_err", "inner_se",
                        "n_paths"], res.table)]
    tol = 0.15 if cfg.dimension == 3 else 0.25
    summary = {
        "slope": res.slope, "intercept": res.intercept,
        "r_squared": res.r_squared, "nominal_slope": res.nominal_slope,
        "log_correction_applied": res.log_correction_applied,
        "valid": res.valid, "reason": res.reason,
        "verdict": {"criterion": "rate_slope_matches_nominal",
                    "observed": res.slope, "expected": res.nominal_slope,
                    "tolerance": tol,
                    "pass": bool(res.valid
                                 and abs(res.slope - res.nominal_slope) <= tol)},
    }
    payload = {"table": res.table, "slope": res.slope, "intercept": res.intercept}
    code = EXIT_OK if res.valid else EXIT_INVALID_RUN
    return code, summary, payload, files


def _run_dist_test(cfg, out_dir, workers):
    spec = make_spectrum(cfg)
    f = make_initial(cfg)
    eps = min(cfg.eps_list)
    if cfg.dimension == 3:
        if cfg.potential.kind != "gaussian" or f.kind != "constant":
            raise ValueError("the d=3 distributional test uses the closed-form "
                             "mode-sum path average: gaussian potential and "
                             "constant initial data only")
        x = cfg.point()
        s2 = sigma2(spec)
        samples = v_eps_exact_ensemble(spec, cfg.potential.n_modes, cfg.t, x,
                                       eps, s2, cfg.n_samples,
                                       cfg.master_seed, workers)
        ve = var_eps(spec, f, cfg.t, x, s2, eps)
        vl = var_limit(spec, f, cfg.t, x, s2)
        res = clt_test_d3(samples, ve)
        rows = [(i, s.real, s.imag) for i, s in enumerate(samples)]
        files = [write_csv(os.path.join(out_dir, "dist_test.csv"),
                           ["omega_index", "re_v", "im_v"], rows)]
        ok = bool(res.p_value > 0.01 and res.re_null_ok)
        summary = {
            "test": dataclasses.asdict(res),
            "var_eps": ve, "var_limit": vl, "epsilon": eps,
            "pass": ok,
            # pass iff |p - 1| <= 0.99, i.e. p > 0.01 (and the Re null holds)
            "verdict": {"criterion": "solution_law_matches_normal_limit",
                        "observed": res.p_value, "expected": 1.0,
                        "tolerance": 0.99, "pass": ok},
        }
        payload = {"samples": np.imag(samples), "target_sd": math.sqrt(ve),
                   "axis_label": "Im(centered solution)"}
        return EXIT_OK, summary, payload, files
    if cfg.dimension == 4:
        res = d4_corrector_clt(spec, cfg.eps_list, cfg.n_samples, cfg.master_seed)
        rows = [(i, v) for i, v in enumerate(res.samples)]
        files = [write_csv(os.path.join(out_dir, "dist_test.csv"),
                           ["sample_index", "rescaled_corrector"], rows),
                 write_csv(os.path.join(out_dir, "dist_test_trace.csv"),
                           ["epsilon", "lambda", "sample_var",
                            "quad_var_over_logeps"], res.trace)]
        summary = {
            "test": dataclasses.asdict(res.test),
            "target_variance": res.target_variance,
            "trace": res.trace,
            "pass": bool(res.test.p_value > 0.01),
            "verdict": {"criterion": "critical_corrector_law_matches_target",
                        "observed": res.test.p_value, "expected": 1.0,
                        "tolerance": 0.99,
                        "pass": bool(res.test.p_value > 0.01)},
        }
        payload = {"samples": res.samples,
                   "target_sd": math.sqrt(res.target_variance),
                   "axis_label": "rescaled corrector at the origin"}
        return EXIT_OK, summary, payload, files
    raise ValueError("dist-test covers dimensions 3 (solution law) and 4 "
                     "(critical corrector law)")


def _run_spde_var(cfg, out_dir, workers):
    if cfg.dimension != 3:
        raise ValueError("the limit-variance comparison is the d=3 object")
    spec = make_spectrum(cfg)
    f = make_initial(cfg)
    x = cfg.point()
    s2 = sigma2(spec)
    vl = var_limit(spec, f, cfg.t, x, s2)
    rows = []
    for eps in sorted(set(cfg.eps_list), reverse=True):
        ve = var_eps(spec, f, cfg.t, x, s2, eps)
        rows.append((eps, ve, ve / vl if vl > 0 else math.nan))
    files = [write_csv(os.path.join(out_dir, "spde_var.csv"),
                       ["epsilon", "var_eps", "ratio_to_limit"], rows)]
    smallest = rows[-1]
    summary = {"var_limit": vl, "sigma2": s2,
               "rows": [{"epsilon": r[0], "var_eps": r[1], "ratio": r[2]}
                        for r in rows],
               # the finite-scale variance at the smallest requested eps
               # should sit within 10% of the limit for the run to be in the
               # asymptotic window; an honest False here just means eps is
               # still too coarse, so it does not change the exit code
               "verdict": {"criterion": "finite_scale_variance_near_limit",
                           "observed": smallest[2], "expected": 1.0,
                           "tolerance": 0.1,
                           "pass": bool(vl > 0
                                        and abs(smallest[2] - 1.0) <= 0.1)}}
    payload = {"table": np.array(rows), "var_limit": vl}
    return EXIT_OK, summary, payload, files


def _h_profile(radius, coef):
    def h(pts):
        r2 = np.sum(pts ** 2, axis=1) / radius ** 2
        out = np.zeros(len(pts))
        m = r2 < 1.0
        out[m] = coef * np.exp(-1.0 / (1.0 - r2[m]))
        return out
    return h


def _run_validate(cfg, out_dir, workers):
    seed = cfg.master_seed
    rows = []

    box = np.array([[-1.5, 1.5]] * 3)
    closed, mc = poisson_moment_identity(_h_profile(1.2, 1.0),
                                         _h_profile(1.0, 0.8),
                                         _h_profile(1.4, -0.6),
                                         box, 200000, mix(seed, 1))
    tol = 4.0 * mc.std_err
    rows.append({"criterion": "poisson_moment_identity",
                 "observed": abs(mc.mean - closed), "expected": 0.0,
                 "tolerance": tol, "pass": bool(abs(mc.mean - closed) <= tol)})

    sig = np.array([[1.0, 0.3, 0.2, 0.1],
                    [0.3, 0.8, 0.15, 0.25],
                    [0.2, 0.15, 0.9, 0.3],
                    [0.1, 0.25, 0.3, 1.1]])
    closed4 = gaussian_fourth_moment(sig, 0.7)
    mc4 = gaussian_fourth_moment_mc(sig, 0.7, 400000, mix(seed, 2))
    tol = 4.0 * mc4.ci / 1.96
    rows.append({"criterion": "gaussian_fourth_moment",
                 "observed": abs(mc4.mean - closed4), "expected": 0.0,
                 "tolerance": tol, "pass": bool(abs(mc4.mean - closed4) <= tol)})

    f_pair = (lambda b: b[:, 0], lambda b: np.tile([1.0, 0.0, 0.0], (len(b), 1)))
    lhs, rhs, ci = malliavin_duality_check(f_pair, lambda p: np.ones_like(p),
                                           1.0, 100000, mix(seed, 3))
    tol = 4.0 * ci / 1.96
    rows.append({"criterion": "malliavin_duality",
                 "observed": lhs, "expected": rhs,
                 "tolerance": tol, "pass": bool(abs(lhs - rhs) <= tol)})

    mclt = mclt_bound_check(standard_qv_profiles(), 200000, mix(seed, 4))
    flat = next(r for r in mclt if r.name == "flat")
    rows.append({"criterion": "mclt_flat_bracket_zero",
                 "observed": flat.lhs, "expected": 0.0,
                 "tolerance": 1e-12, "pass": bool(flat.lhs <= 1e-12)})
    worst = max((r.ratio for r in mclt if r.rhs > 0), default=0.0)
    rows.append({"criterion": "mclt_ratio_bound",
                 "observed": worst, "expected": 0.0,
                 "tolerance": 2.0, "pass": bool(worst <= 2.0)})

    files = [write_csv(os.path.join(out_dir, "validate.csv"),
                       ["criterion", "observed", "expected", "tolerance", "pass"],
                       [(r["criterion"], r["observed"], r["expected"],
                         r["tolerance"], r["pass"]) for r in rows])]
    all_pass = all(r["pass"] for r in rows)
    summary = {"checks": rows, "all_pass": all_pass}
    code = EXIT_OK if all_pass else EXIT_INVALID_RUN
    return code, summary, {"rows": rows}, files


_RUNNERS = {
    "field-sample": _run_field_sample,
    "sigma2": _run_sigma2,
    "corrector": _run_corrector,
    "simulate": _run_simulate,
    "rates": _run_rates,
    "dist-test": _run_dist_test,
    "spde-var": _run_spde_var,
    "validate": _run_validate,
}


def run(cfg: ExperimentConfig, workers=None) -> int:
    """Execute the configured experiment; returns the process exit code."""
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    code, summary, payload, files = _RUNNERS[cfg.experiment](cfg, out_dir, workers)
    summary = {"experiment": cfg.experiment, "master_seed": cfg.master_seed,
               "exit_code": code, **summary}
    files.append(write_json(os.path.join(out_dir, "summary.json"), summary))
    files.append(report.render_figure(cfg.experiment, payload,
                                      os.path.join(out_dir, "figure.png")))
    write_manifest(out_dir, cfg, files)
    return code


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _raw_config_keys(path: str) -> set[str]:
    keys = set()
    with open(path, "r") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line and "=" in line:
                keys.add(line.split("=", 1)[0].strip())
    return keys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homfluct",
        description="Simulation and verification toolkit for parabolic "
                    "homogenization with oscillatory random potentials.")
    sub = parser.add_subparsers(dest="experiment", required=True,
                                metavar="{" + ",".join(EXPERIMENTS) + "}")
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--workers", type=int,
                       help="process count (fallback: HF_WORKERS, then 1)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = parse_config(args.config)
            if "experiment" in _raw_config_keys(args.config) \
                    and cfg.experiment != args.experiment:
                print(f"error: config requests experiment '{cfg.experiment}' "
                      f"but the subcommand is '{args.experiment}'",
                      file=sys.stderr)
                return EXIT_USAGE
        else:
            cfg = ExperimentConfig()
        cfg = with_experiment(cfg, args.experiment)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, master_seed=args.seed)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, output_dir=args.out)
        code = run(cfg, args.workers)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"{cfg.experiment}: outputs in {cfg.output_dir} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
