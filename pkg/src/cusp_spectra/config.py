"""Run configuration: TOML sections mapped onto frozen dataclasses.

See ``docs/config.md`` for the key reference.  Unknown sections or keys are
rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib as _toml_reader
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml_reader
import tomli_w

from .errors import ConfigError

EXPERIMENTS = ("square_sanity", "lipschitz_rate", "cusp_rate", "projector_ensemble", "property_p")


@dataclass(frozen=True)
class GeometryConfig:
    alpha: float = 0.95
    eps0: float = 0.2
    eps_levels: tuple[float, ...] = (0.16, 0.08, 0.04, 0.02)
    eps_ref: float = 0.005
    dim: int = 2


@dataclass(frozen=True)
class DiscretizationConfig:
    h: float = 0.05
    grading: float = 4.0
    axis_grading: float = 0.2
    quad_order: int = 7


@dataclass(frozen=True)
class SolverConfig:
    count: int = 20
    tol: float = 1e-8
    k: int = 4
    q0: float = math.inf
    seed: int = 0


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"


@dataclass(frozen=True)
class RunOptions:
    workers: int = 1
    cache: bool = True


@dataclass(frozen=True)
class LipschitzConfig:
    radii: tuple[float, ...] = (0.4, 0.3, 0.2, 0.15, 0.1)
    kappa: float = 1.0
    center: float = 0.5


@dataclass(frozen=True)
class EnsembleConfig:
    samples: int = 10_000
    max_dim: int = 12


@dataclass(frozen=True)
class PropertyPConfig:
    domain: str = "cusp"


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "cusp_rate"
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    run: RunOptions = field(default_factory=RunOptions)
    lipschitz: LipschitzConfig = field(default_factory=LipschitzConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    property_p: PropertyPConfig = field(default_factory=PropertyPConfig)

    def validate(self) -> "RunConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose one of {', '.join(EXPERIMENTS)}")
        g, d, s = self.geometry, self.discretization, self.solver
        levels = g.eps_levels
        if not levels:
            raise ConfigError("geometry.eps_levels must not be empty")
        if any(b >= a for a, b in zip(levels, levels[1:])):
            raise ConfigError("geometry.eps_levels must be strictly decreasing")
        if not all(0.0 < e <= g.eps0 for e in levels):
            raise ConfigError("geometry.eps_levels must lie in (0, eps0]")
        if not 0.0 < g.eps_ref < levels[-1]:
            raise ConfigError("geometry.eps_ref must be positive and below every level")
        if d.h <= 0:
            raise ConfigError("discretization.h must be positive")
        if d.grading < 1:
            raise ConfigError("discretization.grading must be >= 1")
        if d.quad_order not in (3, 7):
            raise ConfigError("discretization.quad_order must be 3 or 7")
        if s.k < 1:
            raise ConfigError("solver.k must be >= 1")
        if s.count < 1 or s.tol <= 0:
            raise ConfigError("solver.count must be >= 1 and solver.tol positive")
        if not (s.q0 > 2):
            raise ConfigError("solver.q0 must exceed 2 (inf allowed)")
        if not 0 <= s.seed < 2 ** 64:
            raise ConfigError("solver.seed must be an unsigned 64-bit integer")
        if self.run.workers < 1:
            raise ConfigError("run.workers must be >= 1")
        if self.property_p.domain not in ("cusp", "square"):
            raise ConfigError("property_p.domain must be 'cusp' or 'square'")
        if self.ensemble.samples < 1 or self.ensemble.max_dim < 2:
            raise ConfigError("ensemble.samples must be >= 1 and ensemble.max_dim >= 2")
        if any(r <= 0 for r in self.lipschitz.radii) or len(self.lipschitz.radii) < 3:
            raise ConfigError("lipschitz.radii needs at least 3 positive radii")
        return self

    def with_overrides(self, seed=None, workers=None, out=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, solver=replace(cfg.solver, seed=int(seed)))
        if workers is not None:
            cfg = replace(cfg, run=replace(cfg.run, workers=int(workers)))
        if out is not None:
            cfg = replace(cfg, output=replace(cfg.output, dir=str(out)))
        return cfg.validate()


_SECTIONS = {f.name: f.type for f in fields(RunConfig) if f.name != "experiment"}


def _coerce(cls, name, raw: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    kwargs = {}
    defaults = cls()
    for key, value in raw.items():
        ref = getattr(defaults, key)
        try:
            if isinstance(ref, tuple):
                value = tuple(float(v) for v in value)
            elif isinstance(ref, bool):
                if not isinstance(value, bool):
                    raise TypeError("expected true/false")
            elif isinstance(ref, int):
                if isinstance(value, bool) or int(value) != value:
                    raise TypeError("expected an integer")
                value = int(value)
            elif isinstance(ref, float):
                value = _parse_float(value)
            elif isinstance(ref, str):
                value = str(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from exc
        kwargs[key] = value
    return cls(**kwargs)


def _parse_float(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity"):
        return math.inf
    if isinstance(v, bool):
        raise TypeError("expected a number")
    return float(v)


def from_dict(data: dict) -> RunConfig:
    data = dict(data)
    exp = data.pop("experiment", {})
    if isinstance(exp, str):
        name = exp
    else:
        extra = set(exp) - {"name"}
        if extra:
            raise ConfigError(f"unknown key(s) in [experiment]: {', '.join(sorted(extra))}")
        name = exp.get("name", RunConfig.experiment)
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    classes = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig) if f.name != "experiment"}
    parts = {sec: _coerce(classes[sec], sec, raw) for sec, raw in data.items()}
    return RunConfig(experiment=name, **parts).validate()


def to_dict(cfg: RunConfig) -> dict:
    out = {"experiment": {"name": cfg.experiment}}
    for f in fields(RunConfig):
        if f.name == "experiment":
            continue
        sec = dataclasses.asdict(getattr(cfg, f.name))
        for k, v in sec.items():
            if isinstance(v, tuple):
                sec[k] = list(v)
            elif isinstance(v, float) and math.isinf(v):
                sec[k] = "inf"
        out[f.name] = sec
    return out


def loads(text: str) -> RunConfig:
    try:
        data = _toml_reader.loads(text)
    except _toml_reader.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return from_dict(data)


def dumps(cfg: RunConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def load(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    return loads(p.read_text())
