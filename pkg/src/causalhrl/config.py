"""Run configuration: JSON with every default spelled out, plus dotted overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .driver import DriverSettings
from .hrl import HrlHyper
from .numeric import ConfigurationError
from .scm import ScmHyper
from .worlds import WORLDS

ABLATION_MODES = ("none", "random_intervention", "ev_dropout")


@dataclass
class EnvSection:
    name: str = "chaincraft"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in WORLDS:
            raise ValueError(f"unknown env {self.name!r}")
        cfg_cls = WORLDS[self.name][1]
        known = {f.name for f in fields(cfg_cls)}
        bad = sorted(set(self.params) - known)
        if bad:
            raise ValueError(f"unknown {self.name} params {bad}")
        cfg_cls(**self.params)


@dataclass
class AblationSection:
    mode: str = "none"
    dropout_ratio: float = 0.0
    drop_vars: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ABLATION_MODES:
            raise ValueError(f"ablation.mode must be one of {ABLATION_MODES}")
        if not 0 <= self.dropout_ratio < 1:
            raise ValueError("ablation.dropout_ratio must lie in [0, 1)")


@dataclass
class EvalSection:
    milestone_episodes: int = 1000
    flat_baseline: bool = False

    def __post_init__(self):
        if self.milestone_episodes < 0:
            raise ValueError("eval.milestone_episodes must be >= 0")


@dataclass
class RunConfig:
    env: EnvSection = field(default_factory=EnvSection)
    scm: ScmHyper = field(default_factory=ScmHyper)
    hrl: HrlHyper = field(default_factory=HrlHyper)
    driver: DriverSettings = field(default_factory=DriverSettings)
    ablation: AblationSection = field(default_factory=AblationSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    out_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


SECTIONS = {f.name: f for f in fields(RunConfig)}


def _section_cls(name):
    return SECTIONS[name].default_factory


def _check_types(section, cls, values) -> None:
    defaults = cls()
    for key, v in values.items():
        d = getattr(defaults, key)
        ok = True
        if isinstance(d, bool):
            ok = isinstance(v, bool)
        elif isinstance(d, int):
            ok = isinstance(v, int) and not isinstance(v, bool)
        elif isinstance(d, float):
            ok = isinstance(v, (int, float)) and not isinstance(v, bool)
        elif isinstance(d, str):
            ok = isinstance(v, str)
        elif d is None:
            ok = v is None or isinstance(v, (int, float))
        if not ok:
            raise ConfigurationError(f"{section}.{key} has the wrong type: {v!r}")


def from_dict(obj: dict) -> RunConfig:
    """Builds and validates a config; raises ConfigurationError on any problem."""
    if not isinstance(obj, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = sorted(set(obj) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(f"unknown config keys {unknown}")
    kw = {}
    try:
        for name, f in SECTIONS.items():
            if name not in obj:
                continue
            value = obj[name]
            if name in ("seed", "out_dir"):
                kw[name] = value
                continue
            if not isinstance(value, dict):
                raise ConfigurationError(f"section {name!r} must be an object")
            cls = _section_cls(name)
            allowed = {g.name for g in fields(cls)}
            bad = sorted(set(value) - allowed)
            if bad:
                raise ConfigurationError(f"unknown keys in {name}: {bad}")
            _check_types(name, cls, value)
            kw[name] = cls(**value)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigurationError):
            raise
        raise ConfigurationError(str(e)) from None
    if "seed" in kw and not isinstance(kw["seed"], int):
        raise ConfigurationError("seed must be an integer")
    return RunConfig(**kw)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config is not valid JSON: {e.msg} at line {e.lineno}") from None
    return from_dict(obj)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Applies ``section.key=value`` (or ``env.params.key=value``) strings."""
    obj = cfg.to_dict()
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = obj
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigurationError(f"unknown override key {key!r}")
            node = node[p]
        leaf = parts[-1]
        in_params = len(parts) >= 2 and parts[-2] == "params"
        if not isinstance(node, dict) or (leaf not in node and not in_params):
            raise ConfigurationError(f"unknown override key {key!r}")
        node[leaf] = _parse_value(text)
    return from_dict(obj)


def as_plain(obj):
    return asdict(obj) if is_dataclass(obj) else obj
