"""Experiment configuration: dataclasses, strict JSON (de)serialization, presets."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

STRATEGIES = ("gradnorm", "equal", "uncertainty", "static")
FORMAT_VERSION = "gradnorm-run/1"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class TaskSetSpec:
    seed: int = 0
    num_tasks: int = 2
    sigmas: list[float] | None = None
    input_dim: int = 250
    output_dim: int = 100
    base_scale: float = 10.0
    perturbation_scale: float = 3.5
    scale_is_variance: bool = False
    sigma_spread: float = 50.0


@dataclass
class ModelSpec:
    seed: int = 0
    hidden: int = 100
    depth: int = 4
    shared_layer_index: int = -1
    tied_heads: bool = False


@dataclass
class StrategySpec:
    name: str = "gradnorm"
    alpha: float | None = None
    weights: list[float] | None = None


@dataclass
class OptimizerSpec:
    network_lr: float = 1e-3
    weight_lr: float = 0.025
    weight_floor: float = 1e-4
    persistent_weight_optimizer: bool = True


@dataclass
class ExperimentConfig:
    taskset: TaskSetSpec = field(default_factory=TaskSetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    strategy: StrategySpec = field(default_factory=lambda: StrategySpec("gradnorm", 0.12))
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    steps: int = 20000
    batch_size: int = 100
    eval_every: int = 100
    data_seed: int = 0
    test_seed: int = 0
    test_batch_size: int = 1000

    def validate(self) -> "ExperimentConfig":
        ts, st = self.taskset, self.strategy
        _check(ts.num_tasks >= 1, "taskset.num_tasks", "must be >= 1")
        _check(ts.input_dim >= 1, "taskset.input_dim", "must be >= 1")
        _check(ts.output_dim >= 1, "taskset.output_dim", "must be >= 1")
        _check(ts.base_scale >= 0, "taskset.base_scale", "must be >= 0")
        _check(ts.perturbation_scale >= 0, "taskset.perturbation_scale", "must be >= 0")
        _check(ts.sigma_spread > 0, "taskset.sigma_spread", "must be > 0")
        if ts.sigmas is not None:
            _check(len(ts.sigmas) == ts.num_tasks, "taskset.sigmas", f"needs {ts.num_tasks} entries")
            _check(all(s > 0 for s in ts.sigmas), "taskset.sigmas", "entries must be > 0")
        m = self.model
        _check(m.hidden >= 1, "model.hidden", "must be >= 1")
        _check(m.depth >= 1, "model.depth", "must be >= 1")
        _check(-m.depth <= m.shared_layer_index < m.depth, "model.shared_layer_index", "must address a trunk layer")
        _check(st.name in STRATEGIES, "strategy.name", f"must be one of {', '.join(STRATEGIES)}")
        if st.name == "gradnorm":
            _check(st.alpha is not None, "strategy.alpha", "required for gradnorm")
            _check(st.alpha >= 0, "strategy.alpha", "must be >= 0")
        else:
            _check(st.alpha is None, "strategy.alpha", f"only valid for gradnorm, not {st.name}")
        if st.name == "static":
            _check(st.weights is not None, "strategy.weights", "required for static")
            _check(len(st.weights) == ts.num_tasks, "strategy.weights", f"needs {ts.num_tasks} entries")
            _check(all(w > 0 for w in st.weights), "strategy.weights", "entries must be > 0")
        else:
            _check(st.weights is None, "strategy.weights", f"only valid for static, not {st.name}")
        o = self.optimizer
        _check(o.network_lr >= 0, "optimizer.network_lr", "must be >= 0")
        _check(o.weight_lr >= 0, "optimizer.weight_lr", "must be >= 0")
        _check(0 < o.weight_floor < 1, "optimizer.weight_floor", "must be in (0, 1)")
        _check(self.steps >= 0, "steps", "must be >= 0")
        _check(self.batch_size >= 1, "batch_size", "must be >= 1")
        _check(self.eval_every >= 1, "eval_every", "must be >= 1")
        _check(self.test_batch_size >= 1, "test_batch_size", "must be >= 1")
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def with_strategy(self, name: str, alpha: float | None = None, weights=None) -> "ExperimentConfig":
        out = copy.deepcopy(self)
        out.strategy = StrategySpec(name, alpha, None if weights is None else [float(w) for w in weights])
        return out.validate()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        out = copy.deepcopy(self)
        out.taskset.seed = out.model.seed = out.data_seed = out.test_seed = seed
        return out


def _check(ok: bool, path: str, message: str) -> None:
    if not ok:
        raise ConfigError(f"{path}: {message}")


_SECTIONS = {"taskset": TaskSetSpec, "model": ModelSpec, "strategy": StrategySpec, "optimizer": OptimizerSpec}


def _coerce(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{prefix}." if prefix else ""
        raise ConfigError(f"{where}{unknown[0]}: unknown key")
    kwargs = {}
    for name, value in data.items():
        path = f"{prefix}.{name}" if prefix else name
        if name in _SECTIONS and cls is ExperimentConfig:
            kwargs[name] = _coerce(_SECTIONS[name], value, path)
            continue
        kwargs[name] = _coerce_value(value, known[name].type, path)
    return cls(**kwargs)


def _coerce_value(value, type_name, path):
    type_name = str(type_name)
    if value is None:
        if "None" in type_name:
            return None
        raise ConfigError(f"{path}: may not be null")
    if type_name.startswith("list"):
        if not isinstance(value, list) or not all(_is_number(v) for v in value):
            raise ConfigError(f"{path}: expected a list of numbers")
        return [float(v) for v in value]
    if type_name == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false")
        return value
    if type_name == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if type_name.startswith("float"):
        if not _is_number(value):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if type_name == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    raise ConfigError(f"{path}: unsupported field type {type_name}")


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def from_dict(data: dict[str, Any]) -> ExperimentConfig:
    """Strict parse; an optional ``format`` tag (as written in config echoes) must match."""
    if isinstance(data, dict) and "format" in data:
        data = dict(data)
        tag = data.pop("format")
        if tag != FORMAT_VERSION:
            raise ConfigError(f"format: unsupported version {tag!r} (expected {FORMAT_VERSION})")
    return _coerce(ExperimentConfig, data, "").validate()


def load(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return from_dict(data)


def preset(name: str) -> ExperimentConfig:
    """``toy2``: two tasks, sigma = (1, 100).  ``toy10``: ten tasks, sampled sigmas."""
    if name == "toy2":
        cfg = ExperimentConfig(taskset=TaskSetSpec(num_tasks=2, sigmas=[1.0, 100.0]))
    elif name == "toy10":
        cfg = ExperimentConfig(taskset=TaskSetSpec(num_tasks=10, sigmas=None))
    else:
        raise ConfigError(f"preset: unknown preset {name!r} (choose toy2 or toy10)")
    return cfg.validate()


def merge(base: ExperimentConfig, **changes) -> ExperimentConfig:
    """Shallow ``dataclasses.replace`` followed by validation."""
    out = replace(copy.deepcopy(base), **changes)
    return out.validate()

