"""Experiment configuration: one pydantic model per section, every key
defaulted, unknown keys rejected. Files are TOML or JSON; the resolved config
is dumped as JSON next to every artifact a run writes."""

from __future__ import annotations

import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # stdlib only from 3.11
    import tomli as tomllib
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from .augment import AugmentConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Section):
    source: Literal["mnist", "synthetic"] = "synthetic"
    path: str = "data/mnist"
    classes_per_task: int = Field(2, gt=0)
    val_fraction: float = Field(0.1, gt=0.0, lt=1.0)
    # cap on training samples kept per class (mnist only); None keeps all
    max_per_class: int | None = Field(None, gt=0)
    # synthetic-source geometry; ignored for mnist
    n_tasks: int = Field(2, gt=0)
    dim: int = Field(6, ge=2)
    # val_fraction * samples_per_class must cover memory.per_class
    samples_per_class: int = Field(200, gt=0)
    test_per_class: int = Field(100, gt=0)


class ModelSection(_Section):
    hidden_width: int = Field(256, gt=0)
    depth: int = Field(3, gt=0)
    proj_dim: int = Field(64, gt=0)


class MaskSection(_Section):
    s_max: float = Field(700.0, ge=1.0)
    lambda1: float = Field(0.25, ge=0.0)
    lambda_rest: float = Field(0.1, ge=0.0)
    embedding_compensation: bool = True
    anneal: bool = True


class TrainSection(_Section):
    contrastive_epochs: int = Field(50, gt=0)
    batch: int = Field(128, gt=0)
    tau: float = Field(0.07, gt=0.0)
    base_lr: float = Field(0.1, gt=0.0)
    peak_lr: float = Field(1.0, gt=0.0)
    warmup_epochs: int = Field(10, ge=0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    finetune_epochs: int = Field(20, gt=0)
    finetune_lr: float = Field(0.1, gt=0.0)
    finetune_views: bool = True  # False: rotation expansion only, no view aug


class CalibSection(_Section):
    iterations: int = Field(160, ge=0)
    lr: float = Field(0.01, gt=0.0)
    batch: int = Field(32, gt=0)


class MemorySection(_Section):
    per_class: int = Field(20, ge=0)


class AugmentSection(_Section):
    hflip_p: float = Field(0.5, ge=0.0, le=1.0)
    jitter_p: float = Field(0.8, ge=0.0, le=1.0)
    pad: int = Field(4, ge=0)
    noise_sigma: float = Field(0.05, ge=0.0)
    rotations: bool = True
    center_crop: bool = False

    def build(self, **overrides) -> AugmentConfig:
        return AugmentConfig(**{**self.model_dump(), **overrides})


class EvalSection(_Section):
    score: Literal["logit", "softmax"] = "logit"
    mode: Literal["til", "cil"] = "til"
    calibrated: bool = False


class ExperimentConfig(_Section):
    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    masknet: MaskSection = MaskSection()
    train: TrainSection = TrainSection()
    calib: CalibSection = CalibSection()
    memory: MemorySection = MemorySection()
    augment: AugmentSection = AugmentSection()
    eval: EvalSection = EvalSection()
    seed: int = 0
    out: str = "runs"

    def task_lambda(self, task_id: int) -> float:
        return self.masknet.lambda1 if task_id == 1 else self.masknet.lambda_rest


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    elif path.suffix == ".json":
        raw = json.loads(path.read_text())
    else:
        raise ValueError(f"unsupported config format '{path.suffix}'; use .toml or .json")
    return ExperimentConfig.model_validate(raw)


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.model_dump(), indent=2, sort_keys=True) + "\n")
