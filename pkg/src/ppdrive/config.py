"""Scenario configuration: nested dataclasses addressed by flat dotted keys.

A config file is a YAML mapping whose keys are ``section.field`` (nested
mappings are flattened), e.g.::

    motor.l_max: 0.04
    controller.delta_i: 0.3
    sim.duration: 1.0
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .controller import ControllerConfig
from .estimator import SLOPE_METHODS, DetectorConfig
from .plant import MotorParams
from .protocol import DEFAULT_T_BIT


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    t_bit: float = DEFAULT_T_BIT
    # per sampled bit, applied between the line and the module's reader
    flip_prob: float = 0.0

    def __post_init__(self):
        if not self.t_bit > 0:
            raise ValueError("t_bit must be positive")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0, 1]")


@dataclass(frozen=True)
class EstimatorConfig:
    guard_cycles: int = 3
    confirm_count: int = 1
    rel_epsilon: float = 0.02
    slope_method: str = "lsq"
    trim: float = 0.8

    def __post_init__(self):
        self.detector()
        if self.slope_method not in SLOPE_METHODS:
            raise ValueError(f"slope_method must be one of {SLOPE_METHODS}")
        if not 0.0 < self.trim <= 1.0:
            raise ValueError("trim must be in (0, 1]")

    def detector(self) -> DetectorConfig:
        return DetectorConfig(self.guard_cycles, self.confirm_count, self.rel_epsilon)


@dataclass(frozen=True)
class SimConfig:
    duration: float = 1.0
    dt: float = 1e-6
    seed: int = 0
    theta0_deg: float = 31.0
    omega0: float = 15.0
    # hold omega at omega0 (mechanics frozen), for slope/inductance studies
    fixed_speed: bool = False
    sensor_noise: float = 0.0
    # containment tolerance as a fraction of delta_i
    band_tol_fraction: float = 0.1

    def __post_init__(self):
        if not self.duration >= 0 or not math.isfinite(self.duration):
            raise ValueError("duration must be finite and >= 0")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.sensor_noise < 0:
            raise ValueError("sensor_noise must be >= 0")


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/latest"
    # the trace CSV is large (one row per dt); metrics are always written
    write_trace: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    motor: MotorParams = field(default_factory=MotorParams)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if self.sim.dt > self.protocol.t_bit / 4 * (1 + 1e-9):
            raise ValueError("dt must be at most t_bit/4")
        n = round(self.protocol.t_bit / self.sim.dt)
        if abs(n * self.sim.dt - self.protocol.t_bit) > 1e-9 * self.protocol.t_bit:
            raise ValueError("t_bit must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.sim.duration / self.sim.dt))

    def to_flat(self) -> dict[str, Any]:
        out = {}
        for sec in SECTIONS:
            for f in dataclasses.fields(getattr(self, sec)):
                out[f"{sec}.{f.name}"] = getattr(getattr(self, sec), f.name)
        return out

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> "ScenarioConfig":
        return cls().with_overrides(flat)

    def with_overrides(self, flat: Mapping[str, Any]) -> "ScenarioConfig":
        updates: dict[str, dict[str, Any]] = {sec: {} for sec in SECTIONS}
        for key, value in flat.items():
            sec, _, name = key.partition(".")
            if sec not in SECTIONS or not name:
                raise ConfigError(f"unknown config key {key!r}")
            sub = getattr(self, sec)
            fields = {f.name: f for f in dataclasses.fields(sub)}
            if name not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            updates[sec][name] = _coerce(key, value, getattr(sub, name))
        try:
            subs = {sec: dataclasses.replace(getattr(self, sec), **kw) for sec, kw in updates.items()}
            return ScenarioConfig(**subs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


SECTIONS = ("motor", "controller", "protocol", "estimator", "sim", "output")


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        if value in (0, 1):
            return bool(value)
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    return str(value)


def flatten(mapping: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in mapping.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_flat(path: str | Path) -> dict[str, Any]:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: expected a key-value mapping")
    return flatten(data)


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> ScenarioConfig:
    flat = load_flat(path) if path else {}
    flat.update(overrides or {})
    return ScenarioConfig.from_flat(flat)


def parse_override(text: str) -> tuple[str, Any]:
    """``key=value`` with the value parsed as a YAML scalar."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like key=value, got {text!r}")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    return key.strip(), value


def dump_flat(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_flat(), sort_keys=False)
