"""Run configuration: YAML in, typed dataclasses out, errors with field paths."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import yaml

from .engine import GenerationConfig
from .loss import WeightPolicy
from .model import ModelConfig
from .noise import SCHEDULES, AugmentConfig, MergeScheduler
from .train import OptimConfig


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class TaskConfig:
    kind: str = "key-value"
    params: dict = field(default_factory=dict)
    corpus_size: int = 20000
    eval_size: int = 200
    corpus_seed: int = 1
    eval_seed: int = 2


@dataclass(frozen=True)
class EvalConfig:
    lengths: tuple[int, ...] = (4, 8, 16, 32, 64)
    ablations: tuple[str, ...] = ("full",)
    seed: int = 0
    greedy: bool = False


@dataclass(frozen=True)
class RunConfig:
    task: TaskConfig = TaskConfig()
    augment: AugmentConfig = AugmentConfig()
    schedule: str = "linear"
    policy: WeightPolicy = WeightPolicy()
    model: ModelConfig = ModelConfig()
    optim: OptimConfig = OptimConfig()
    generation: GenerationConfig = GenerationConfig()
    eval: EvalConfig = EvalConfig()
    seed: int = 0


_NESTED = {
    RunConfig: {
        "task": TaskConfig,
        "augment": AugmentConfig,
        "policy": WeightPolicy,
        "model": ModelConfig,
        "optim": OptimConfig,
        "generation": GenerationConfig,
        "eval": EvalConfig,
    },
    AugmentConfig: {"scheduler": MergeScheduler},
}
_TUPLES = {"mix_ratio", "betas", "lengths", "ablations"}


def to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def _check_ranges(d: dict, errors: list[str]) -> None:
    def get(path):
        cur = d
        for p in path.split("."):
            if not isinstance(cur, dict) or p not in cur:
                return None
            cur = cur[p]
        return cur

    def need(path, ok, msg):
        v = get(path)
        if v is not None and not ok(v):
            errors.append(f"{path}: {msg}, got {v!r}")

    prob = lambda v: isinstance(v, (int, float)) and 0.0 <= v <= 1.0
    pos = lambda v: isinstance(v, (int, float)) and v > 0
    nonneg = lambda v: isinstance(v, (int, float)) and v >= 0
    need("augment.scheduler.p_merge", prob, "must lie in [0, 1]")
    need("augment.scheduler.kind", lambda v: v in ("static", "dynamic-inverse", "mixture"),
         "must be static, dynamic-inverse or mixture")
    need("augment.scheduler.inverse_scale", nonneg, "must be >= 0")
    need("augment.scheduler.mix_ratio",
         lambda v: len(v) == 2 and all(nonneg(x) for x in v) and sum(v) > 0,
         "must be two non-negative weights with positive sum")
    need("augment.delete_max", lambda v: isinstance(v, int) and v >= 0, "must be an integer >= 0")
    need("augment.merge_pass_cap", lambda v: isinstance(v, int) and v >= 1, "must be an integer >= 1 or null")
    need("schedule", lambda v: v in SCHEDULES, f"must be one of {sorted(SCHEDULES)}")
    need("policy.mode", lambda v: v in ("balanced", "uniform"), "must be balanced or uniform")
    need("optim.lr", pos, "must be > 0")
    need("optim.steps", lambda v: isinstance(v, int) and v >= 1, "must be an integer >= 1")
    need("optim.batch_size", lambda v: isinstance(v, int) and v >= 1, "must be an integer >= 1")
    need("optim.warmup_frac", prob, "must lie in [0, 1]")
    need("optim.aligned_split_prob", prob, "must lie in [0, 1]")
    need("generation.temperature", pos, "must be > 0")
    need("generation.top_p", lambda v: isinstance(v, (int, float)) and 0 < v <= 1, "must lie in (0, 1]")
    need("generation.unmask_budget", lambda v: isinstance(v, int) and v >= 1, "must be an integer >= 1")
    need("generation.max_len", lambda v: isinstance(v, int) and v >= 1, "must be an integer >= 1")
    need("model.width", lambda v: isinstance(v, int) and v >= 1, "must be an integer >= 1")
    if isinstance(get("model.width"), int) and isinstance(get("model.heads"), int):
        if get("model.heads") < 1 or get("model.width") % get("model.heads"):
            errors.append("model.heads: must be >= 1 and divide model.width")
    need("task.corpus_size", lambda v: isinstance(v, int) and v >= 1, "must be an integer >= 1")
    need("eval.lengths", lambda v: len(v) > 0 and all(isinstance(x, int) and x >= 1 for x in v),
         "must be a non-empty list of positive integers")


def _build(cls, data: dict, path: str, errors: list[str]):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        where = f"{path}{key}"
        if key not in known:
            errors.append(f"{where}: unknown field")
            continue
        sub = _NESTED.get(cls, {}).get(key)
        if sub is not None:
            if not isinstance(val, dict):
                errors.append(f"{where}: expected a mapping")
                continue
            val = _build(sub, val, where + ".", errors)
        elif key in _TUPLES and isinstance(val, list):
            val = tuple(val)
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        errors.append(f"{path.rstrip('.') or '<root>'}: {e}")
        return cls()


def from_dict(data: dict) -> RunConfig:
    errors: list[str] = []
    _check_ranges(data, errors)
    if errors:
        raise ConfigError(errors)
    cfg = _build(RunConfig, data, "", errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return from_dict(data)


def dump_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(to_dict(cfg), f, sort_keys=False)


def with_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Apply dotted-path overrides, e.g. ``{"augment.scheduler.p_merge": 0.25}``."""
    d = to_dict(cfg)
    for dotted, value in overrides.items():
        cur = d
        parts = dotted.split(".")
        for p in parts[:-1]:
            cur = cur[p]
        cur[parts[-1]] = value
    return from_dict(d)
