"""Run configuration: nested dataclasses loaded from YAML with strict key checking.

Every field has a default; a config file only lists what it changes.
Overrides use dotted keys, e.g. ``train.steps_per_iteration=800``.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .losses import LossWeights


class ConfigError(ValueError):
    pass


@dataclass
class SceneConfig:
    kind: str = "boxes"  # boxes | plane | homogeneous | nerf_synthetic
    path: str = ""  # nerf_synthetic root
    resolution: int = 64
    num_views: int = 4  # seen views
    num_val: int = 3
    num_test: int = 8
    elevation: float = 30.0
    radius: float = 4.0
    near: float = 2.0
    far: float = 6.0


@dataclass
class FieldSettings:
    depth: int = 4
    width: int = 128
    dim_omega: int = 16
    dim_phi: int = 16
    pos_frequencies: int = 10
    dir_frequencies: int = 4
    beta_min: float = 0.01
    activation: str = "relu"


@dataclass
class TrainSettings:
    steps_per_iteration: int = 5000
    batch_rays: int = 256  # seen rays per step
    pseudo_rays: int = 256  # pseudo-view rays per step
    entropy_ray_fraction: float = 0.25  # target-free unseen rays, as a fraction of the step's rays
    num_samples: int = 64
    lr: float = 5e-4
    lr_final: float = 5e-4  # log-linear decay to this value over an iteration
    warm_start: bool = False
    log_every: int = 50


@dataclass
class PseudoSettings:
    unseen_per_seen: int = 3
    policy: str = "interpolate"
    keep_radius: bool = True
    min_opacity: float = 0.5  # depth-map validity threshold for warping


@dataclass
class RunConfig:
    name: str = "run"
    seed: int = 0
    max_iterations: int = 3
    eps_conv: float = 0.05  # dB
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: FieldSettings = field(default_factory=FieldSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    loss: LossWeights = field(default_factory=LossWeights)
    pseudo: PseudoSettings = field(default_factory=PseudoSettings)

    def validate(self) -> "RunConfig":
        checks = [
            (self.train.steps_per_iteration >= 1, "train.steps_per_iteration", "must be >= 1"),
            (self.max_iterations >= 1, "max_iterations", "must be >= 1"),
            (self.scene.num_views >= 2, "scene.num_views", "need at least 2 seen views"),
            (self.train.num_samples >= 2, "train.num_samples", "must be >= 2"),
            (self.scene.near < self.scene.far, "scene.near", "must be < scene.far"),
            (0 <= self.train.entropy_ray_fraction < 1, "train.entropy_ray_fraction", "must be in [0, 1)"),
            (self.pseudo.policy in ("interpolate", "hemisphere"), "pseudo.policy", "interpolate|hemisphere"),
            (self.scene.kind in ("boxes", "plane", "homogeneous", "nerf_synthetic"), "scene.kind",
             "boxes|plane|homogeneous|nerf_synthetic"),
            (self.train.lr >= 0 and self.train.lr_final >= 0, "train.lr", "must be >= 0"),
        ]
        for ok, key, msg in checks:
            if not ok:
                raise ConfigError(f"{key}: {msg}")
        return self


def _build(cls, data, prefix=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        full = f"{prefix}{key}"
        if key not in names:
            raise ConfigError(f"{full}: unknown key")
        tp = hints[key]
        if dataclasses.is_dataclass(tp):
            kwargs[key] = _build(tp, value, full + ".")
        else:
            kwargs[key] = _coerce(tp, value, full)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{prefix or 'config'}: {e}") from None


def _coerce(tp, value, key):
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponent literals like 5e-3 as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"{item}: override must look like key=value")
        key, raw = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: {p} is not a section")
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def load_config(path=None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"{path}: file not found")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from None
    data = apply_overrides(data, list(overrides))
    return _build(RunConfig, data).validate()


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False))
