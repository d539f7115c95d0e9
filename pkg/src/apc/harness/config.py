"""Experiment configuration: YAML in, validated dataclasses out."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from apc.games import GAMES
from apc.learners.ablation import VARIANTS
from apc.learners.rules import RULE_KINDS

LEARNERS = ("tabular", "a2c", "rule")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class AgentSpec:
    learner: str = "tabular"
    variant: str = "full"
    rule: str | None = None
    punishes: bool = True


@dataclass
class Mechanism:
    enabled: bool = True
    c: float = 0.7
    delta: float = 0.7
    epsilon: float = 0.05
    window: int = 25
    beta: float = 0.1
    harm_lr: float = 1e-2
    harm_resolution: float = 0.0
    harm_hidden: int = 64
    harm_shrink: float = 0.0
    encoder: str = "joint"
    fit_steps: int = 20_000
    batch_size: int = 64
    collect_episodes: int = 250
    buffer_capacity: int = 50_000
    random_init_scale: float = 1.0


@dataclass
class Training:
    episodes: int = 5000
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    gamma: float = 0.99
    lr: float = 0.05
    theta_floor: float = 0.01
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    entropy_coef: float = 0.01
    hidden: int = 64


@dataclass
class Outputs:
    dir: str = "runs"
    log_every: int = 1
    checkpoints: bool = True
    windows: bool = True


@dataclass
class ExperimentConfig:
    name: str
    environment: str
    env_params: dict[str, Any]
    agents: list[AgentSpec]
    mechanism: Mechanism
    training: Training
    outputs: Outputs

    def to_dict(self) -> dict:
        d = asdict(self)
        d["environment"] = {"name": d.pop("environment"), "params": d.pop("env_params")}
        return d

    def replace(self, **changes) -> ExperimentConfig:
        """Copy with dotted-path overrides, e.g. ``replace(**{"mechanism.c": 0.2})``."""
        d = self.to_dict()
        for key, value in changes.items():
            node = d
            *head, last = key.split(".")
            for part in head:
                node = node[part]
            node[last] = value
        return parse_config(d)


def _section(raw: dict, name: str, cls, path: str):
    data = raw.get(name) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}{name}", "expected a mapping")
    known = cls.__dataclass_fields__
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}{name}.{key}", "unknown field")
    obj = cls(**copy.deepcopy(data))
    for key, f in known.items():
        value = getattr(obj, key)
        want = f.type
        if want in ("float",) and isinstance(value, (int, float)) and not isinstance(value, bool):
            setattr(obj, key, float(value))
        elif want == "int" and (not isinstance(value, int) or isinstance(value, bool)):
            raise ConfigError(f"{path}{name}.{key}", f"expected an integer, got {value!r}")
        elif want == "float" and not isinstance(getattr(obj, key), float):
            raise ConfigError(f"{path}{name}.{key}", f"expected a number, got {value!r}")
        elif want == "bool" and not isinstance(value, bool):
            raise ConfigError(f"{path}{name}.{key}", f"expected true/false, got {value!r}")
    return obj


def _agents(raw, n_agents: int) -> list[AgentSpec]:
    if raw is None:
        return [AgentSpec() for _ in range(n_agents)]
    if not isinstance(raw, list) or not raw:
        raise ConfigError("agents", "expected a non-empty list")
    out: list[AgentSpec] = []
    for k, entry in enumerate(raw):
        where = f"agents[{k}]"
        if not isinstance(entry, dict):
            raise ConfigError(where, "expected a mapping")
        entry = dict(entry)
        count = entry.pop("count", 1)
        if not isinstance(count, int) or count < 1:
            raise ConfigError(f"{where}.count", "expected a positive integer")
        for key in entry:
            if key not in AgentSpec.__dataclass_fields__:
                raise ConfigError(f"{where}.{key}", "unknown field")
        spec = AgentSpec(**entry)
        if spec.learner not in LEARNERS:
            raise ConfigError(f"{where}.learner", f"expected one of {LEARNERS}, got {spec.learner!r}")
        if spec.variant not in VARIANTS:
            raise ConfigError(f"{where}.variant", f"expected one of {VARIANTS}, got {spec.variant!r}")
        if spec.learner == "rule":
            if spec.rule not in RULE_KINDS:
                raise ConfigError(f"{where}.rule", f"expected one of {RULE_KINDS}, got {spec.rule!r}")
            spec.punishes = bool(entry.get("punishes", False))
        out.extend(copy.deepcopy(spec) for _ in range(count))
    if len(out) != n_agents:
        raise ConfigError("agents", f"{len(out)} agents listed but the environment has {n_agents}")
    return out


def _num_agents(env: str, params: dict) -> int:
    from apc.games import make_game

    try:
        return make_game(env, params).n
    except (TypeError, ValueError) as exc:
        raise ConfigError("environment.params", str(exc)) from None


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    for key in raw:
        if key not in ("name", "environment", "agents", "mechanism", "training", "outputs"):
            raise ConfigError(key, "unknown field")
    env = raw.get("environment")
    if isinstance(env, str):
        env = {"name": env}
    if not isinstance(env, dict) or "name" not in env:
        raise ConfigError("environment.name", "missing")
    if env["name"] not in GAMES:
        raise ConfigError("environment.name", f"unknown environment {env['name']!r}; choose from {sorted(GAMES)}")
    params = env.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("environment.params", "expected a mapping")
    n = _num_agents(env["name"], params)

    mech = _section(raw, "mechanism", Mechanism, "")
    for key in ("c", "delta", "epsilon"):
        if getattr(mech, key) < 0:
            raise ConfigError(f"mechanism.{key}", "must be >= 0")
    if mech.window < 1:
        raise ConfigError("mechanism.window", "must be >= 1")
    if mech.beta <= 0:
        raise ConfigError("mechanism.beta", "must be > 0")
    if mech.encoder not in ("joint", "others"):
        raise ConfigError("mechanism.encoder", "expected 'joint' or 'others'")
    for key in ("fit_steps", "collect_episodes", "buffer_capacity", "batch_size"):
        if getattr(mech, key) < (0 if key in ("fit_steps", "collect_episodes") else 1):
            raise ConfigError(f"mechanism.{key}", "out of range")

    train = _section(raw, "training", Training, "")
    if not isinstance(train.seeds, list) or not train.seeds:
        raise ConfigError("training.seeds", "must be a non-empty list")
    if not all(isinstance(s, int) and not isinstance(s, bool) for s in train.seeds):
        raise ConfigError("training.seeds", "seeds must be integers")
    if not 0 <= train.gamma < 1:
        raise ConfigError("training.gamma", "must lie in [0, 1)")
    if train.episodes < 0:
        raise ConfigError("training.episodes", "must be >= 0")
    if not 0 <= train.theta_floor < 0.5:
        raise ConfigError("training.theta_floor", "must lie in [0, 0.5)")

    outs = _section(raw, "outputs", Outputs, "")
    if outs.log_every < 1:
        raise ConfigError("outputs.log_every", "must be >= 1")

    agents = _agents(raw.get("agents"), n)
    tabular_ok = env["name"] in ("ipgg", "mipgg")
    for k, a in enumerate(agents):
        if a.learner == "tabular" and not tabular_ok:
            raise ConfigError(f"agents[{k}].learner", f"tabular policies only fit the matrix games, not {env['name']}")
    name = raw.get("name") or env["name"]
    if not isinstance(name, str):
        raise ConfigError("name", "expected a string")
    return ExperimentConfig(name, env["name"], dict(params), agents, mech, train, outs)


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("apc.presets").iterdir() if p.name.endswith(".yaml"))


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse a YAML config; a bare name such as ``ipgg`` selects a shipped preset."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and str(path) in preset_names():
        p = resources.files("apc.presets") / f"{path}.yaml"
    try:
        with p.open(encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML ({exc})") from None
    except OSError as exc:
        raise ConfigError(str(path), exc.strerror or str(exc)) from None
    return parse_config(raw)
