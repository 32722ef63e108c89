"""Versioned JSON configuration for experiments, training runs and the CLI."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = 1


class TrainingSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_train: int = Field(200_000, ge=1)
    batch_size: int = Field(1024, ge=2)
    epochs: int = Field(1, ge=1)
    lr: float = Field(1e-3, gt=0)
    cosine: bool = False
    pairs: int = Field(1, ge=1)
    chunk: int = Field(16384, ge=2)
    holdout: int = Field(4096, ge=2)
    early_stop: Optional[int] = Field(None, ge=1)
    theta_hidden: int = 64
    theta_embed: int = 10
    x_hidden: Optional[int] = None
    head_hidden: int = 64
    dropout: float = Field(0.5, ge=0, lt=1)

    @model_validator(mode="after")
    def _sizes(self):
        if self.n_train < self.batch_size:
            raise ValueError("n_train must be at least one batch")
        return self


class GroundTruthSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    M: int = Field(10_000_000, ge=2)
    seed: int = Field(0, ge=0)
    chunk: int = Field(100_000, ge=1)


class NRule(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["ratio", "allocation"] = "ratio"
    ratio: float = Field(10.0, gt=0)
    probe_n: int = Field(2000, ge=30)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: int = SCHEMA_VERSION
    task: str = "gbm_asian"
    task_options: dict[str, Any] = Field(default_factory=dict)
    space: Optional[dict[str, Any]] = None
    eval_theta: dict[str, Any] = Field(default_factory=dict)
    methods: list[str] = Field(default_factory=lambda: ["MC", "PEMC"])
    n_grid: list[int] = Field(default_factory=lambda: [1000, 4000])
    repeats: int = Field(100, ge=1)
    alpha: float = Field(0.05, gt=0, le=1)
    N_rule: NRule = Field(default_factory=NRule)
    training: TrainingSettings = Field(default_factory=TrainingSettings)
    ground_truth: GroundTruthSettings = Field(default_factory=GroundTruthSettings)
    model_path: Optional[str] = None
    boost_model_path: Optional[str] = None
    train_if_missing: bool = True
    cache_dir: Optional[str] = None
    out: Optional[str] = None
    threads: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)

    @field_validator("version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported config version {v}; expected {SCHEMA_VERSION}")
        return v

    @field_validator("n_grid")
    @classmethod
    def _grid(cls, v):
        if not v or min(v) < 2:
            raise ValueError("n_grid needs sample sizes >= 2")
        return v

    @field_validator("task")
    @classmethod
    def _task(cls, v):
        from .tasks import TASKS

        if v not in TASKS:
            raise ValueError(f"unknown task {v}; choose from {sorted(TASKS)}")
        return v

    @model_validator(mode="after")
    def _truth_size(self):
        if self.ground_truth.M < max(self.n_grid):
            raise ValueError("ground-truth sample count must exceed the largest n")
        return self


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.model_validate(json.loads(Path(path).read_text()))


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(cfg.model_dump_json(indent=2))
