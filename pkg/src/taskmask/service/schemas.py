"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict

from ..config import ExperimentConfig


class _Body(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainRequest(_Body):
    config: ExperimentConfig = ExperimentConfig()


class EvalRequest(_Body):
    config: ExperimentConfig = ExperimentConfig()
    checkpoint: str
    mode: Literal["til", "cil"] | None = None
    calibrated: bool | None = None


class CalibrateRequest(_Body):
    config: ExperimentConfig = ExperimentConfig()
    checkpoint: str


class AblateRequest(_Body):
    config: ExperimentConfig = ExperimentConfig()
    sweep: Literal["s", "memory", "augment"]


class ReportRequest(_Body):
    config: ExperimentConfig = ExperimentConfig()
    checkpoint: str


class SelftestRequest(_Body):
    seed: int = 0
    inject_bug: Literal["gradient"] | None = None


class JobCreated(_Body):
    id: str
    kind: str


class JobStatus(_Body):
    id: str
    kind: str
    status: Literal["running", "done", "failed"]
    log: list[str]
    result: dict | None = None
    error: str | None = None


class PathResult(_Body):
    path: str
    log: list[str] = []


class SelftestResult(_Body):
    ok: bool
    log: list[str]


class Health(_Body):
    status: str
    version: str
