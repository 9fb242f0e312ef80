"""Run configuration: TOML file plus command-line overrides."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from datetime import date
from typing import Any, Optional

import tomli

from .errors import ConfigError

# Units at this boundary follow the command line: years, days, kilograms.


@dataclass(frozen=True)
class ScenarioConfig:
    launch_date: str = "2005-05-07"
    freeze_years: float = 1.05
    thrust_n: float = 0.33
    isp_s: float = 3800.0
    m0_kg: float = 1500.0


@dataclass(frozen=True)
class IntegratorSection:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-12
    flight_tol: float = 1e-9


@dataclass(frozen=True)
class HomotopySection:
    epsilon_final: float = 1e-6
    restarts: int = 200
    method: str = "hybr"
    samples: int = 100


@dataclass(frozen=True)
class DatabaseSection:
    name: str = "A"
    spec: str = "ball"  # ball | gaussian
    rho: float = 0.2
    mass_bound: float = 0.02
    trajectories: int = 1000
    samples: int = 100
    terminate_box: bool = False
    horizon_min: float = 0.8
    horizon_max: float = 1.2
    binary: bool = False


@dataclass(frozen=True)
class TrainSection:
    loss: str = "n1"
    arch: str = "3x200"
    epochs: int = 250
    batch: int = 4096
    lr: float = 1e-4
    s1: float = 1e2
    value_kind: str = "cost_to_go"
    patience: int = 10
    factor: float = 0.5
    min_delta: float = 1e-6


@dataclass(frozen=True)
class EvalSection:
    regions: tuple[float, ...] = (2.0, 4.0, 8.0, 16.0)
    n: int = 100
    horizon_factor: float = 2.0
    discrepancy_dt_years: float = 0.1
    flight_samples: int = 1000


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    integrator: IntegratorSection = field(default_factory=IntegratorSection)
    homotopy: HomotopySection = field(default_factory=HomotopySection)
    database: DatabaseSection = field(default_factory=DatabaseSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_json(self) -> dict:
        d = asdict(self)
        d["eval"]["regions"] = list(self.eval.regions)
        return d

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()


_SECTIONS = {f.name: f.type for f in fields(RunConfig)}


def _coerce(cls, name: str, value: Any, current: Any):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{cls.__name__}.{name} must be true or false")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{cls.__name__}.{name} must be an integer")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{cls.__name__}.{name} must be a number")
        return float(value)
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{cls.__name__}.{name} must be a list")
        return tuple(float(v) for v in value)
    if not isinstance(value, str):
        raise ConfigError(f"{cls.__name__}.{name} must be a string")
    return value


def _update(obj, values: dict):
    known = {f.name for f in fields(obj)}
    out = {}
    for key, val in values.items():
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"unknown setting {type(obj).__name__}.{key}")
        cur = getattr(obj, key)
        if is_dataclass(cur):
            if not isinstance(val, dict):
                raise ConfigError(f"section [{key}] must be a table")
            out[key] = _update(cur, val)
        else:
            out[key] = _coerce(type(obj), key, val, cur)
    return replace(obj, **out)


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the TOML file, then ``overrides`` ({section: {key: value}})."""
    cfg = RunConfig()
    if path:
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        cfg = _update(cfg, data)
    if overrides:
        clean = {}
        for key, val in overrides.items():
            if isinstance(val, dict):
                val = {k: v for k, v in val.items() if v is not None}
                if val:
                    clean[key] = val
            elif val is not None:
                clean[key] = val
        cfg = _update(cfg, clean)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    try:
        date.fromisoformat(cfg.scenario.launch_date)
    except ValueError as exc:
        raise ConfigError(f"invalid launch date {cfg.scenario.launch_date!r}") from exc
    if cfg.workers < 1:
        raise ConfigError("workers must be at least 1")
    if not 0 < cfg.homotopy.epsilon_final <= 0.1:
        raise ConfigError("epsilon_final must lie in (0, 0.1]")
    if cfg.homotopy.method not in ("hybr", "lm"):
        raise ConfigError("homotopy.method must be 'hybr' or 'lm'")
    if cfg.database.spec not in ("ball", "gaussian"):
        raise ConfigError("database.spec must be 'ball' or 'gaussian'")
    if cfg.database.trajectories < 1 or cfg.database.samples < 2:
        raise ConfigError("database needs >= 1 trajectory and >= 2 samples")
    if cfg.train.loss not in ("n1", "n2", "n3", "n4"):
        raise ConfigError("train.loss must be one of n1, n2, n3, n4")
    if cfg.train.epochs < 0 or cfg.train.batch < 1 or not cfg.train.lr > 0:
        raise ConfigError("invalid training hyperparameters")
    if any(r < 0 for r in cfg.eval.regions) or cfg.eval.n < 1:
        raise ConfigError("invalid evaluation settings")
