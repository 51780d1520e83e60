"""Run configuration: JSON <-> dataclasses with strict key checking."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from .data import AugPolicy
from .errors import ConfigError
from .losses import LossConfig


@dataclass(frozen=True)
class DataSpec:
    """Where the train/test samples come from.

    ``synth`` draws Gaussian blobs and splits them by index hash; ``csv`` and
    ``idx`` read explicit train and test files.
    """

    kind: str = "synth"
    classes: int = 8
    per_class: int = 125
    n_samples: Optional[int] = 1250
    dim: int = 2
    spread: float = 0.6
    seed: int = 0
    test_fraction: float = 0.2
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("synth", "csv", "idx"):
            raise ConfigError(f"unknown data kind {self.kind!r}")
        if self.kind == "csv" and not (self.train_path and self.test_path):
            raise ConfigError("csv data needs train_path and test_path")
        if self.kind == "idx" and not all(
            (self.train_images, self.train_labels, self.test_images, self.test_labels)
        ):
            raise ConfigError("idx data needs train_images, train_labels, test_images, test_labels")


@dataclass(frozen=True)
class OptimConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if not (math.isfinite(self.lr0) and self.lr0 > 0):
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")


@dataclass(frozen=True)
class TrainConfig:
    data: DataSpec = field(default_factory=DataSpec)
    model: dict = field(default_factory=lambda: {"arch": "mlp", "hidden": [256, 128]})
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    lr_drops: tuple[int, ...] = (15, 22)
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    eval_every: int = 1
    ece_bins: int = 20
    augment: AugPolicy = field(default_factory=AugPolicy)
    teacher_checkpoint: Optional[str] = None
    output_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "lr_drops", tuple(int(e) for e in self.lr_drops))
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.ece_bins < 1:
            raise ConfigError(f"ece_bins must be >= 1, got {self.ece_bins}")
        if list(self.lr_drops) != sorted(self.lr_drops):
            raise ConfigError(f"lr_drops must be ascending, got {list(self.lr_drops)}")
        if not isinstance(self.model, dict) or self.model.get("arch") not in ("mlp", "convnet"):
            raise ConfigError(f"model.arch must be 'mlp' or 'convnet', got {self.model!r}")
        if self.augment.pad < 0 or not 0 <= self.augment.flip_p <= 1:
            raise ConfigError(f"bad augmentation policy {self.augment}")
        if self.loss.kind == "kd" and not self.teacher_checkpoint:
            raise ConfigError("loss kind 'kd' needs teacher_checkpoint")

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def to_dict(self, include_output: bool = True) -> dict:
        d = asdict(self)
        d["lr_drops"] = list(self.lr_drops)
        if not include_output:
            d.pop("output_dir")
        return d


def _build(cls, raw: Any, where: str):
    if raw is None:
        return cls()
    if isinstance(raw, cls):
        return raw
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a JSON object")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: dict) -> TrainConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    kw = dict(raw)
    kw["data"] = _build(DataSpec, raw.get("data"), "data")
    kw["loss"] = _build(LossConfig, raw.get("loss"), "loss")
    kw["optimizer"] = _build(OptimConfig, raw.get("optimizer"), "optimizer")
    kw["augment"] = _build(AugPolicy, raw.get("augment"), "augment")
    if "model" in raw and not isinstance(raw["model"], dict):
        raise ConfigError("model must be a JSON object")
    try:
        return TrainConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> TrainConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)
