"""Run configuration: one YAML document with per-command sections.

Precedence is command-line flag > config file > dataclass default.  Unknown
keys anywhere in the document are rejected, and every section's constraint
violations are reported together.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .augmentation import AugmentationConfig
from .inference import AdaptiveCropConfig
from .losses import LossConfig
from .synthetic import SceneConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Configuration file or overrides violate the schema."""


@dataclass
class DataConfig:
    annotations: str | None = None
    images_dir: str | None = None
    split: str | None = None
    image_width: int | None = None   # fixed dims for the annotation loader
    image_height: int | None = None


@dataclass
class SynthConfig:
    count: int = 200
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)


@dataclass
class InferenceConfig:
    crop_mode: str = "adaptive"              # "adaptive" | "fixed"
    fixed_crop: list[float] | None = None    # left, top, right, bottom
    adaptive: AdaptiveCropConfig = field(default_factory=AdaptiveCropConfig)
    overlay: bool = False

    def __post_init__(self) -> None:
        if self.crop_mode not in ("adaptive", "fixed"):
            raise ConfigError(f"crop_mode must be 'adaptive' or 'fixed', got {self.crop_mode!r}")
        if self.fixed_crop is not None and len(self.fixed_crop) != 4:
            raise ConfigError("fixed_crop needs exactly 4 values: left, top, right, bottom")


@dataclass
class BenchmarkConfig:
    iterations: int = 30
    warmup: int = 5
    batch_size: int = 1


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)


def _coerce(value, target_type):
    # YAML gives lists; some config fields are tuples.
    if isinstance(value, list) and "tuple" in str(target_type):
        return tuple(value)
    return value


def _from_dict(cls, raw: dict, path: str, errors: list[str]):
    if not isinstance(raw, dict):
        errors.append(f"{path}: expected a mapping, got {type(raw).__name__}")
        return cls()
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        errors.append(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in raw:
            continue
        value = raw[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if is_dataclass(default):
            kwargs[name] = _from_dict(type(default), value, f"{path}.{name}", errors)
        else:
            kwargs[name] = _coerce(value, f.type)
    try:
        return cls(**kwargs)
    except Exception as exc:
        errors.append(f"{path}: {exc}")
        return cls()


def run_config_from_dict(raw: dict) -> RunConfig:
    errors: list[str] = []
    cfg = _from_dict(RunConfig, raw or {}, "config", errors)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return cfg


def run_config_to_dict(cfg: RunConfig) -> dict:
    def normalize(obj):
        if is_dataclass(obj):
            return {f.name: normalize(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, (tuple, list)):
            return [normalize(v) for v in obj]
        return obj
    return normalize(cfg)


def load_run_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return run_config_from_dict(raw or {})


def save_run_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(run_config_to_dict(cfg), sort_keys=False),
                          encoding="utf-8")


def _normalized(cfg: RunConfig) -> dict:
    return run_config_to_dict(cfg)


def configs_equal(a: RunConfig, b: RunConfig) -> bool:
    return _normalized(a) == _normalized(b)
