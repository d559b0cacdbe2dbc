"""Experiment configuration: a TOML file with fixed sections and no unknown keys.

Schema (every key optional; defaults below)::

    [grid]      L_box, N
    [solver]    dt_max, cfl_safety, dealias, dt_rel, boundary_mass_tol
    [physics]   initial_data_kind, epsilon, theta, path, M, delta, window, nonlinear
    [schedule]  t_first, t_end, snapshot_ratio, phase_tracking, T_list, t_eval,
                t_floor, roundtrip_t, v_max, n_v
    [outputs]   dir, formats

``initial_data_kind`` is one of ``gaussian`` (``epsilon * exp(-x^2)``),
``soliton`` (uses ``theta``), ``file`` (a binary snapshot at ``path``),
``datum_power_tail`` (the inverse pipeline's default datum) and ``zero``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .solver import SolverConfig

DATA_KINDS = ("gaussian", "soliton", "file", "datum_power_tail", "zero")
FORMATS = ("csv", "json", "bin")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridSection:
    L_box: float = 64 * math.pi
    N: int = 4096


@dataclass(frozen=True)
class SolverSection:
    dt_max: float = 0.01
    cfl_safety: float = 0.5
    dealias: bool = True
    dt_rel: float | None = None
    boundary_mass_tol: float = 1e-8


@dataclass(frozen=True)
class PhysicsSection:
    initial_data_kind: str = "gaussian"
    epsilon: float = 0.05
    theta: float = math.pi / 8
    path: str | None = None
    M: float = 0.02
    delta: float = 0.1
    window: str = "gaussian"
    nonlinear: bool = True


@dataclass(frozen=True)
class ScheduleSection:
    t_first: float = 16.0
    t_end: float = 1024.0
    snapshot_ratio: float = 2 ** 0.25
    phase_tracking: bool = True
    T_list: tuple = (64.0, 128.0, 256.0, 512.0)
    t_eval: float = 32.0
    t_floor: float = 1.0
    roundtrip_t: float = 256.0
    v_max: float = 20.0
    n_v: int = 2000


@dataclass(frozen=True)
class OutputsSection:
    dir: str = "out"
    formats: tuple = ("csv", "json", "bin")


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSection = field(default_factory=GridSection)
    solver: SolverSection = field(default_factory=SolverSection)
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    outputs: OutputsSection = field(default_factory=OutputsSection)

    def __post_init__(self):
        _validate(self)

    def solver_config(self) -> SolverConfig:
        s = self.solver
        return SolverConfig(dt_max=s.dt_max, cfl_safety=s.cfl_safety, dealias=s.dealias,
                            boundary_mass_tol=s.boundary_mass_tol, dt_rel=s.dt_rel,
                            nonlinear=self.physics.nonlinear)

    def snapshot_times(self) -> list[float]:
        """Log-uniform times from ``t_first`` to ``t_end``, ratio at most ``snapshot_ratio``."""
        sc = self.schedule
        n = max(1, math.ceil(math.log(sc.t_end / sc.t_first) / math.log(sc.snapshot_ratio) - 1e-9))
        return [sc.t_first * (sc.t_end / sc.t_first) ** (k / n) for k in range(n + 1)]

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schedule"]["T_list"] = list(self.schedule.T_list)
        d["outputs"]["formats"] = list(self.outputs.formats)
        return d

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; output directory excluded."""
        d = self.as_dict()
        d["outputs"].pop("dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_output_dir(self, path) -> "ExperimentConfig":
        return dataclasses.replace(self, outputs=dataclasses.replace(self.outputs, dir=str(path)))


_SECTIONS = {"grid": GridSection, "solver": SolverSection, "physics": PhysicsSection,
             "schedule": ScheduleSection, "outputs": OutputsSection}


def _coerce(section: str, name: str, default, value):
    where = f"[{section}] {name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be an array")
        return tuple(float(x) if name == "T_list" else str(x) for x in value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float) or default is None and name == "dt_rel":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{where} must be a string")
    return value


def from_dict(raw: dict) -> ExperimentConfig:
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    parts = {}
    for sec, cls in _SECTIONS.items():
        body = raw.get(sec, {})
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        names = {f.name: f for f in fields(cls)}
        bad = sorted(set(body) - set(names))
        if bad:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(bad)}")
        defaults = cls()
        kw = {k: _coerce(sec, k, getattr(defaults, k), v) for k, v in body.items()}
        parts[sec] = cls(**kw)
    return ExperimentConfig(**parts)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw)


def _validate(c: ExperimentConfig) -> None:
    g, s, p, sc, o = c.grid, c.solver, c.physics, c.schedule, c.outputs
    if g.L_box <= 0:
        raise ConfigError("[grid] L_box must be positive")
    if g.N < 16 or g.N & (g.N - 1):
        raise ConfigError("[grid] N must be a power of two >= 16")
    if s.dt_max <= 0 or not 0 < s.cfl_safety <= 1:
        raise ConfigError("[solver] needs dt_max > 0 and 0 < cfl_safety <= 1")
    if s.dt_rel is not None and s.dt_rel <= 0:
        raise ConfigError("[solver] dt_rel must be positive")
    if p.initial_data_kind not in DATA_KINDS:
        raise ConfigError(f"[physics] initial_data_kind must be one of {', '.join(DATA_KINDS)}")
    if p.initial_data_kind == "file" and not p.path:
        raise ConfigError("[physics] initial_data_kind = 'file' needs path")
    if p.initial_data_kind == "soliton" and not 0 < p.theta < math.pi / 2:
        raise ConfigError("[physics] theta must lie in (0, pi/2)")
    if p.window not in ("gaussian", "bump"):
        raise ConfigError("[physics] window must be 'gaussian' or 'bump'")
    if p.M <= 0 or not 0 < p.delta < 1 or p.M ** 2 > p.delta / 10:
        raise ConfigError("[physics] needs M > 0, 0 < delta < 1 and M^2 <= delta/10")
    if not 0 < sc.t_first < sc.t_end:
        raise ConfigError("[schedule] needs 0 < t_first < t_end")
    if sc.snapshot_ratio <= 1:
        raise ConfigError("[schedule] snapshot_ratio must exceed 1")
    if sc.phase_tracking and sc.snapshot_ratio > 2 ** 0.25 * (1 + 1e-12):
        raise ConfigError("[schedule] phase tracking needs snapshot_ratio <= 2^(1/4)")
    Ts = list(sc.T_list)
    if len(Ts) < 3 or any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise ConfigError("[schedule] T_list needs at least three increasing times")
    if sc.t_floor < 1 or Ts[0] < 4 * sc.t_floor:
        raise ConfigError("[schedule] needs t_floor >= 1 and T_list[0] >= 4 t_floor")
    if not sc.t_floor < sc.t_eval <= Ts[0] / 2:
        raise ConfigError("[schedule] needs t_floor < t_eval <= min(T_list)/2")
    if sc.v_max <= 0 or sc.n_v < 8:
        raise ConfigError("[schedule] needs v_max > 0 and n_v >= 8")
    bad = [f for f in o.formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"[outputs] unknown format(s): {', '.join(bad)}")


def default_config() -> ExperimentConfig:
    return ExperimentConfig()
