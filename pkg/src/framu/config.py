"""Simulation configuration and its flat ``section.key = value`` file format.

Example::

    # comments start with '#'
    server.beta = 0.5
    env.drift_round = 2
    env.drift_features = 0,1,2
    privacy.enabled = true

Unknown keys are errors; missing keys keep their defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from .attention import Thresholds
from .env import EnvSpec
from .privacy import PrivacyConfig


class ConfigError(ValueError):
    """Bad configuration key, value or file syntax."""


@dataclass(frozen=True)
class AgentConfig:
    lr: float = 0.01
    gamma: float = 0.9
    epsilon_greedy: float = 0.1
    epsilon_decay: float = 0.99
    epsilon_floor: float = 0.01
    local_unlearning: bool = False


@dataclass(frozen=True)
class AttentionConfig:
    eta: float = 0.05
    rho: float = 0.95
    a_max: float = 1.0
    local_delta: float = 0.05
    outdated_threshold: int = 1
    irrelevant_threshold: float = 0.1


@dataclass(frozen=True)
class ServerConfig:
    beta: float = 0.5
    lambda_: float = 0.5
    theta: float = 0.1
    eps_converge: float = 1e-6
    alignment_weighting: bool = False
    feature_unlearning: bool = True


@dataclass(frozen=True)
class ForgetConfig:
    outdated: bool = True
    private: bool = True
    private_after: int = 2


@dataclass(frozen=True)
class SimConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    agent: AgentConfig = field(default_factory=AgentConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    server: ServerConfig = field(default_factory=ServerConfig)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)
    forget: ForgetConfig = field(default_factory=ForgetConfig)
    T_max: int = 15
    steps_per_round: int = 200
    seed: int = 42
    checkpoint_every: int = 0

    def env_spec(self) -> EnvSpec:
        return replace(self.env, seed=self.seed)

    def thresholds(self) -> Thresholds:
        return Thresholds(
            global_theta=self.server.theta,
            local_delta=self.attention.local_delta,
            outdated_threshold=self.attention.outdated_threshold,
            irrelevant_threshold=self.attention.irrelevant_threshold,
        )


_SECTIONS = {
    "env": EnvSpec,
    "agent": AgentConfig,
    "attention": AttentionConfig,
    "server": ServerConfig,
    "privacy": PrivacyConfig,
    "forget": ForgetConfig,
}
_SIM_KEYS = ("T_max", "steps_per_round", "seed", "checkpoint_every")
_HIDDEN = {("env", "seed"), ("env", "true_params")}

# key -> (lower, upper, lower_inclusive, upper_inclusive)
_RANGES: dict[str, tuple[float, float, bool, bool]] = {
    "env.n_features": (1, math.inf, True, False),
    "env.n_actions": (1, math.inf, True, False),
    "env.n_modalities": (1, math.inf, True, False),
    "env.n_agents": (1, math.inf, True, False),
    "env.noise_std": (0, math.inf, True, False),
    "env.private_fraction": (0, 1, True, True),
    "env.points_per_round": (0, 99_999, True, True),
    "env.episode_length": (1, math.inf, True, False),
    "env.validation_size": (1, math.inf, True, False),
    "env.offset_scale": (0, math.inf, True, False),
    "env.drift_round": (1, math.inf, True, False),
    "agent.lr": (0, math.inf, False, False),
    "agent.gamma": (0, 1, True, False),
    "agent.epsilon_greedy": (0, 1, True, True),
    "agent.epsilon_decay": (0, 1, True, True),
    "agent.epsilon_floor": (0, 1, True, True),
    "attention.eta": (0, math.inf, True, False),
    "attention.rho": (0, 1, False, True),
    "attention.a_max": (0, math.inf, False, False),
    "attention.local_delta": (0, math.inf, False, False),
    "attention.outdated_threshold": (0, math.inf, False, False),
    "attention.irrelevant_threshold": (0, math.inf, False, False),
    "server.beta": (0, 1, True, True),
    "server.lambda": (0, 1, True, True),
    "server.theta": (0, math.inf, False, False),
    "server.eps_converge": (0, math.inf, False, False),
    "privacy.epsilon": (0, math.inf, False, False),
    "privacy.clip_norm": (0, math.inf, False, False),
    "forget.private_after": (1, math.inf, True, False),
    "sim.T_max": (1, math.inf, True, False),
    "sim.steps_per_round": (0, math.inf, True, False),
    "sim.checkpoint_every": (0, math.inf, True, False),
    "sim.seed": (0, 2**64 - 1, True, True),
}


def _field_name(key: str) -> str:
    return "lambda_" if key == "lambda" else key


def _key_name(name: str) -> str:
    return "lambda" if name == "lambda_" else name


def _field_types(cls) -> dict[str, Any]:
    hints = {}
    for f in fields(cls):
        hints[f.name] = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    return hints


def known_keys() -> list[str]:
    keys = []
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            if (section, f.name) in _HIDDEN:
                continue
            keys.append(f"{section}.{_key_name(f.name)}")
    keys.extend(f"sim.{k}" for k in _SIM_KEYS)
    return keys


def _kind(key: str) -> str:
    section, name = key.split(".", 1)
    if section == "sim":
        return "int"
    if key in ("env.drift_features", "env.irrelevant_features"):
        return "intlist"
    if key == "env.drift_round":
        return "optint"
    if key == "env.modality_subscription":
        return "str"
    default = _field_types(_SECTIONS[section])[_field_name(name)]
    if isinstance(default, bool):
        return "bool"
    if isinstance(default, int):
        return "int"
    return "float"


def _convert(key: str, raw: Any) -> Any:
    kind = _kind(key)
    if not isinstance(raw, str):
        value = raw
        if kind == "intlist":
            value = tuple(int(v) for v in raw)
        elif kind == "float":
            value = float(raw)
        elif kind in ("int",) and isinstance(raw, float) and raw.is_integer():
            value = int(raw)
        return value
    text = raw.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "optint":
            return None if text.lower() in ("", "none", "off") else int(text)
        if kind == "intlist":
            return tuple(int(v) for v in text.split(",") if v.strip())
        if kind == "str":
            return text.strip("\"'")
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def _check_range(key: str, value: Any) -> None:
    bounds = _RANGES.get(key)
    if bounds is None or value is None or isinstance(value, bool):
        return
    lo, hi, lo_inc, hi_inc = bounds
    ok_lo = value >= lo if lo_inc else value > lo
    ok_hi = value <= hi if hi_inc else value < hi
    if not (ok_lo and ok_hi) or (isinstance(value, float) and math.isnan(value)):
        left = "[" if lo_inc else "("
        right = "]" if hi_inc else ")"
        raise ConfigError(f"{key} = {value!r} outside {left}{lo}, {hi}{right}")


def build_config(values: dict[str, Any], base: Optional[SimConfig] = None) -> SimConfig:
    """Apply flat dotted ``values`` on top of ``base`` (defaults if None)."""
    cfg = base or SimConfig()
    valid = set(known_keys())
    per_section: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    for key, raw in values.items():
        if key not in valid:
            raise ConfigError(f"unknown config key {key!r}")
        value = _convert(key, raw)
        _check_range(key, value)
        section, name = key.split(".", 1)
        if section == "sim":
            top[name] = value
        else:
            per_section.setdefault(section, {})[_field_name(name)] = value
    updates: dict[str, Any] = dict(top)
    for section, changes in per_section.items():
        try:
            updates[section] = replace(getattr(cfg, section), **changes)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{section}: {exc}") from None
    try:
        cfg = replace(cfg, **updates)
        cfg.thresholds()
        cfg.env_spec()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def parse_config_text(text: str, base: Optional[SimConfig] = None) -> SimConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: missing key")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()
        try:
            _convert(key, value) if key in set(known_keys()) else None
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return build_config(values, base)


def parse_config(path) -> SimConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def get_value(cfg: SimConfig, key: str) -> Any:
    if key not in set(known_keys()):
        raise ConfigError(f"unknown config key {key!r}")
    section, name = key.split(".", 1)
    if section == "sim":
        return getattr(cfg, name)
    return getattr(getattr(cfg, section), _field_name(name))


def set_value(cfg: SimConfig, key: str, value: Any) -> SimConfig:
    return build_config({key: value}, cfg)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_flat(cfg: SimConfig) -> dict[str, Any]:
    return {key: get_value(cfg, key) for key in known_keys()}


def serialize_config(cfg: SimConfig) -> str:
    return "".join(f"{key} = {_format(value)}\n" for key, value in to_flat(cfg).items())


def config_hash(cfg: SimConfig) -> bytes:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).digest()
