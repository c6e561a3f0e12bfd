"""HTTP front end over the experiment harness.

Long operations (train, ablate) run on a background thread and are polled
through /jobs/{id}; everything else answers synchronously. Artifact paths in
responses are local to the server process.
"""

from __future__ import annotations

import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..experiment import (run_ablation, run_calibrate, run_eval, run_report,
                          run_train)
from ..selftest import run_selftest
from . import schemas


class Job:
    def __init__(self, kind: str):
        self.id = uuid.uuid4().hex[:12]
        self.kind = kind
        self.status = "running"
        self.log: list[str] = []
        self.result: dict | None = None
        self.error: str | None = None

    def log_line(self, line: str) -> None:
        self.log.append(str(line))

    def view(self) -> schemas.JobStatus:
        return schemas.JobStatus(id=self.id, kind=self.kind, status=self.status,
                                 log=list(self.log), result=self.result,
                                 error=self.error)


class JobRegistry:
    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()

    def start(self, kind: str, work) -> Job:
        job = Job(kind)
        with self._lock:
            self._jobs[job.id] = job

        def run():
            try:
                job.result = work(job)
                job.status = "done"
            except Exception as err:
                job.error = f"{type(err).__name__}: {err}"
                job.status = "failed"

        threading.Thread(target=run, daemon=True).start()
        return job

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)

    def all(self) -> list[Job]:
        with self._lock:
            return list(self._jobs.values())


def _sync(fn):
    """Map harness failures onto HTTP statuses for synchronous endpoints."""
    try:
        return fn()
    except FileNotFoundError as err:
        raise HTTPException(status_code=404, detail=str(err)) from err
    except (ValueError, KeyError) as err:
        raise HTTPException(status_code=400, detail=str(err)) from err
    except HTTPException:
        raise
    except Exception as err:
        raise HTTPException(status_code=500,
                            detail=f"{type(err).__name__}: {err}") from err


def create_app() -> FastAPI:
    app = FastAPI(title="taskmask", version=__version__)
    jobs = JobRegistry()

    @app.get("/healthz", response_model=schemas.Health)
    def healthz():
        return schemas.Health(status="ok", version=__version__)

    @app.post("/train", response_model=schemas.JobCreated)
    def train(req: schemas.TrainRequest):
        cfg = req.config

        def work(job: Job) -> dict:
            state = run_train(cfg, cfg.out, log=job.log_line)
            n = state.cursor["tasks_trained"]
            return {"out": cfg.out,
                    "checkpoints": [str(Path(cfg.out) / f"task{t}.ckpt")
                                    for t in range(1, n + 1)],
                    "matrix_csv": str(Path(cfg.out) / "matrix.csv")}

        job = jobs.start("train", work)
        return schemas.JobCreated(id=job.id, kind=job.kind)

    @app.post("/ablate", response_model=schemas.JobCreated)
    def ablate(req: schemas.AblateRequest):
        cfg, sweep = req.config, req.sweep

        def work(job: Job) -> dict:
            return {"path": str(run_ablation(cfg, sweep, cfg.out, log=job.log_line))}

        job = jobs.start("ablate", work)
        return schemas.JobCreated(id=job.id, kind=job.kind)

    @app.post("/eval", response_model=schemas.PathResult)
    def evaluate(req: schemas.EvalRequest):
        path = _sync(lambda: run_eval(req.config, req.checkpoint, req.config.out,
                                      mode=req.mode, calibrated=req.calibrated))
        return schemas.PathResult(path=str(path))

    @app.post("/calibrate", response_model=schemas.PathResult)
    def calibrate(req: schemas.CalibrateRequest):
        log: list[str] = []
        path = _sync(lambda: run_calibrate(req.config, req.checkpoint,
                                           req.config.out, log=log.append))
        return schemas.PathResult(path=str(path), log=log)

    @app.post("/report", response_model=schemas.PathResult)
    def report(req: schemas.ReportRequest):
        path = _sync(lambda: run_report(req.config, req.checkpoint, req.config.out))
        return schemas.PathResult(path=str(path))

    @app.post("/selftest", response_model=schemas.SelftestResult)
    def selftest(req: schemas.SelftestRequest):
        log: list[str] = []
        ok = _sync(lambda: run_selftest(seed=req.seed, inject_bug=req.inject_bug,
                                        log=log.append))
        return schemas.SelftestResult(ok=ok, log=log)

    @app.get("/jobs", response_model=list[schemas.JobStatus])
    def list_jobs():
        return [j.view() for j in jobs.all()]

    @app.get("/jobs/{job_id}", response_model=schemas.JobStatus)
    def job_status(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id}")
        return job.view()

    return app
