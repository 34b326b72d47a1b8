"""Flat key=value experiment configuration with dotted sections.

Unknown keys are hard errors (misspellings never fall back to defaults), every
diagnostic names the offending key, and serialization echoes the complete
schema with 17-significant-digit floats so configs round-trip losslessly.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np

from .homogenization import InitialCondition
from .random_field import (ShapeFunction, SpectrumModel, make_gaussian_field,
                           make_poisson_field)

EXPERIMENTS = ("field-sample", "sigma2", "corrector", "simulate", "rates",
               "dist-test", "spde-var", "validate")


@dataclass(frozen=True)
class PotentialConfig:
    kind: str = "gaussian"            # gaussian | poisson
    amplitude: float = 1.0
    width: float = 1.0
    n_modes: int = 512
    shape_radius: float = 1.0
    shape_scale: float = 1.0


@dataclass(frozen=True)
class InitialConfig:
    kind: str = "constant"            # constant | bump
    value: float = 1.0
    center: tuple = ()                # empty -> origin
    width: float = 1.0
    height: float = 1.0


@dataclass(frozen=True)
class SegmentConfig:
    start: tuple = ()                 # empty -> origin
    end: tuple = ()                   # empty -> 4 * e_1
    n: int = 129


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "validate"
    dimension: int = 3
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    t: float = 1.0
    x: tuple = ()                     # empty -> origin
    eps_list: tuple = (0.4, 0.2, 0.1)
    lambda_list: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
    n_omega: int = 64
    n_paths: int = 0                  # 0 -> adaptive pilot rule
    dt: float = 0.0                   # 0 -> default policy
    n_samples: int = 2000
    master_seed: int = 0
    output_dir: str = "results"
    segment: SegmentConfig = field(default_factory=SegmentConfig)

    def point(self) -> np.ndarray:
        return np.asarray(self.x if self.x else (0.0,) * self.dimension)


def _parse_float(key, s):
    try:
        return float(s)
    except ValueError:
        raise ValueError(f"config key '{key}': expected a number, got {s!r}") from None


def _parse_int(key, s):
    try:
        return int(s)
    except ValueError:
        raise ValueError(f"config key '{key}': expected an integer, got {s!r}") from None


def _parse_vector(key, s):
    return tuple(_parse_float(key, tok) for tok in s.replace(",", " ").split())


def _parse_str(key, s):
    return s


_SCHEMA = {
    "experiment": _parse_str,
    "dimension": _parse_int,
    "potential.kind": _parse_str,
    "potential.amplitude": _parse_float,
    "potential.width": _parse_float,
    "potential.n_modes": _parse_int,
    "potential.shape_radius": _parse_float,
    "potential.shape_scale": _parse_float,
    "initial.kind": _parse_str,
    "initial.value": _parse_float,
    "initial.center": _parse_vector,
    "initial.width": _parse_float,
    "initial.height": _parse_float,
    "t": _parse_float,
    "x": _parse_vector,
    "eps_list": _parse_vector,
    "lambda_list": _parse_vector,
    "n_omega": _parse_int,
    "n_paths": _parse_int,
    "dt": _parse_float,
    "n_samples": _parse_int,
    "master_seed": _parse_int,
    "output_dir": _parse_str,
    "segment.start": _parse_vector,
    "segment.end": _parse_vector,
    "segment.n": _parse_int,
}


def parse_config_text(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, rhs = line.partition("=")
        key = key.strip()
        rhs = rhs.strip()
        if key not in _SCHEMA:
            raise ValueError(f"config key '{key}' is not recognized "
                             f"(line {lineno}); no defaults for misspellings")
        if key in values:
            raise ValueError(f"config key '{key}' given twice (line {lineno})")
        values[key] = _SCHEMA[key](key, rhs)
    return _build(values)


def parse_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


def _build(values: dict) -> ExperimentConfig:
    def take(key, default):
        return values.get(key, default)

    cfg = ExperimentConfig(
        experiment=take("experiment", "validate"),
        dimension=take("dimension", 3),
        potential=PotentialConfig(
            kind=take("potential.kind", "gaussian"),
            amplitude=take("potential.amplitude", 1.0),
            width=take("potential.width", 1.0),
            n_modes=take("potential.n_modes", 512),
            shape_radius=take("potential.shape_radius", 1.0),
            shape_scale=take("potential.shape_scale", 1.0)),
        initial=InitialConfig(
            kind=take("initial.kind", "constant"),
            value=take("initial.value", 1.0),
            center=take("initial.center", ()),
            width=take("initial.width", 1.0),
            height=take("initial.height", 1.0)),
        t=take("t", 1.0),
        x=take("x", ()),
        eps_list=take("eps_list", (0.4, 0.2, 0.1)),
        lambda_list=take("lambda_list", (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)),
        n_omega=take("n_omega", 64),
        n_paths=take("n_paths", 0),
        dt=take("dt", 0.0),
        n_samples=take("n_samples", 2000),
        master_seed=take("master_seed", 0),
        output_dir=take("output_dir", "results"),
        segment=SegmentConfig(
            start=take("segment.start", ()),
            end=take("segment.end", ()),
            n=take("segment.n", 129)))
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ValueError(f"config key 'experiment': {cfg.experiment!r} is not one of "
                         f"{', '.join(EXPERIMENTS)}")
    if cfg.dimension < 3:
        raise ValueError("config key 'dimension': the potential scaling requires "
                         f"dimension >= 3, got {cfg.dimension}")
    if cfg.potential.kind not in ("gaussian", "poisson"):
        raise ValueError("config key 'potential.kind': expected gaussian or poisson, "
                         f"got {cfg.potential.kind!r}")
    if cfg.potential.amplitude < 0:
        raise ValueError("config key 'potential.amplitude': must be >= 0")
    for key, val in (("potential.width", cfg.potential.width),
                     ("potential.shape_radius", cfg.potential.shape_radius),
                     ("t", cfg.t),
                     ("initial.width", cfg.initial.width)):
        if val <= 0:
            raise ValueError(f"config key '{key}': must be positive, got {val}")
    for key, val in (("potential.n_modes", cfg.potential.n_modes),
                     ("n_omega", cfg.n_omega),
                     ("n_samples", cfg.n_samples),
                     ("segment.n", cfg.segment.n)):
        if val < 1:
            raise ValueError(f"config key '{key}': must be >= 1, got {val}")
    if cfg.n_paths < 0:
        raise ValueError("config key 'n_paths': must be >= 0 (0 selects the "
                         "adaptive pilot rule)")
    if cfg.dt < 0:
        raise ValueError("config key 'dt': must be >= 0 (0 selects the default policy)")
    if cfg.initial.kind not in ("constant", "bump"):
        raise ValueError("config key 'initial.kind': expected constant or bump, "
                         f"got {cfg.initial.kind!r}")
    if not cfg.eps_list:
        raise ValueError("config key 'eps_list': must not be empty")
    if any(e <= 0 for e in cfg.eps_list):
        raise ValueError("config key 'eps_list': entries must be positive")
    if any(a <= b for a, b in zip(cfg.eps_list, cfg.eps_list[1:])):
        raise ValueError("config key 'eps_list': must be strictly decreasing")
    if any(l <= 0 for l in cfg.lambda_list):
        raise ValueError("config key 'lambda_list': entries must be positive")
    for key, vec in (("x", cfg.x), ("initial.center", cfg.initial.center),
                     ("segment.start", cfg.segment.start),
                     ("segment.end", cfg.segment.end)):
        if vec and len(vec) != cfg.dimension:
            raise ValueError(f"config key '{key}': expected {cfg.dimension} "
                             f"components, got {len(vec)}")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, tuple):
        return " ".join(f"{x:.17g}" for x in v)
    return str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    p, i, s = cfg.potential, cfg.initial, cfg.segment
    pairs = [
        ("experiment", cfg.experiment), ("dimension", cfg.dimension),
        ("potential.kind", p.kind), ("potential.amplitude", p.amplitude),
        ("potential.width", p.width), ("potential.n_modes", p.n_modes),
        ("potential.shape_radius", p.shape_radius),
        ("potential.shape_scale", p.shape_scale),
        ("initial.kind", i.kind), ("initial.value", i.value),
        ("initial.center", i.center), ("initial.width", i.width),
        ("initial.height", i.height),
        ("t", cfg.t), ("x", cfg.x), ("eps_list", cfg.eps_list),
        ("lambda_list", cfg.lambda_list), ("n_omega", cfg.n_omega),
        ("n_paths", cfg.n_paths), ("dt", cfg.dt), ("n_samples", cfg.n_samples),
        ("master_seed", cfg.master_seed), ("output_dir", cfg.output_dir),
        ("segment.start", s.start), ("segment.end", s.end), ("segment.n", s.n),
    ]
    return "\n".join(f"{k} = {_fmt(v)}" for k, v in pairs
                     if not (isinstance(v, tuple) and not v)) + "\n"


def make_spectrum(cfg: ExperimentConfig) -> SpectrumModel:
    p = cfg.potential
    if p.kind == "gaussian":
        return SpectrumModel(dimension=cfg.dimension, family="gaussian_bump",
                             amplitude=p.amplitude, width=p.width)
    shape = ShapeFunction(dimension=cfg.dimension, support_radius=p.shape_radius,
                          scale=p.shape_scale)
    return SpectrumModel(dimension=cfg.dimension, family="poisson_induced",
                         shape=shape)


def make_field_factory(cfg: ExperimentConfig):
    """Picklable seed -> frozen realization callable."""
    p = cfg.potential
    if p.kind == "gaussian":
        return partial(make_gaussian_field, make_spectrum(cfg), p.n_modes)
    shape = ShapeFunction(dimension=cfg.dimension, support_radius=p.shape_radius,
                          scale=p.shape_scale)
    return partial(make_poisson_field, shape)


def make_initial(cfg: ExperimentConfig) -> InitialCondition:
    i = cfg.initial
    if i.kind == "constant":
        return InitialCondition.constant(i.value)
    center = np.asarray(i.center if i.center else (0.0,) * cfg.dimension)
    return InitialCondition.bump(center=center, width=i.width, height=i.height)


def correlation_scale(cfg: ExperimentConfig) -> float:
    p = cfg.potential
    return 1.0 / p.width if p.kind == "gaussian" else p.shape_radius


def resolved_dt(cfg: ExperimentConfig) -> float:
    if cfg.dt > 0:
        return cfg.dt
    return min(0.05, correlation_scale(cfg) ** 2 / 20.0)


def with_experiment(cfg: ExperimentConfig, experiment: str) -> ExperimentConfig:
    out = replace(cfg, experiment=experiment)
    validate_config(out)
    return out
