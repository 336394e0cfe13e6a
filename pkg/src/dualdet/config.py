"""Run configuration: one JSON document covering scenes, model, and training.

The JSON mirrors the dataclass tree; omitted keys keep their defaults, lists
are coerced back to tuples where the dataclass default is a tuple, and unknown
keys raise ConfigError so typos do not pass silently.
"""

import dataclasses
import json

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .model import ModelConfig
from .scenesim import SceneSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    scene: SceneSpec = dataclasses.field(default_factory=SceneSpec)
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    train_scenes: int = 16
    eval_scenes: int = 4
    scene_seed: int = 0
    bench_counts: tuple = ((3, 900), (40, 100))   # (neighbor count, pillars)


def _tupleize(v):
    return tuple(_tupleize(x) for x in v) if isinstance(v, (list, tuple)) else v


def _build(cls, d: dict):
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object for {cls.__name__}")
    by_name = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(by_name)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, v in d.items():
        f = by_name[name]
        sub = _NESTED.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, v)
        elif isinstance(v, list):
            kwargs[name] = _tupleize(v)
        else:
            kwargs[name] = v
    return cls(**kwargs)


_NESTED = {
    (RunConfig, "scene"): SceneSpec,
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "train"): TrainConfig,
    (ModelConfig, "encoder"): EncoderConfig,
    (ModelConfig, "decoder"): DecoderConfig,
}


def run_config_from_dict(d: dict) -> RunConfig:
    return _build(RunConfig, d)


def run_config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_run_config(path: str) -> RunConfig:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {path}: {e}") from e
    return run_config_from_dict(d)


def save_run_config(path: str, cfg: RunConfig) -> None:
    with open(path, "w") as fh:
        json.dump(run_config_to_dict(cfg), fh, indent=1, sort_keys=True)
        fh.write("\n")
