"""Thin HTTP client mirroring the service endpoints; used by the CLI when a
server URL is given."""

from __future__ import annotations

import time

import httpx

from .config import ExperimentConfig


class ServiceError(RuntimeError):
    def __init__(self, status_code: int, detail: str):
        super().__init__(f"server returned {status_code}: {detail}")
        self.status_code = status_code
        self.detail = detail


class ServiceClient:
    def __init__(self, base_url: str, timeout: float = 30.0):
        self._http = httpx.Client(base_url=base_url, timeout=timeout)

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, method: str, path: str, body: dict | None = None) -> dict:
        resp = self._http.request(method, path, json=body)
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            raise ServiceError(resp.status_code, str(detail))
        return resp.json()

    def healthz(self) -> dict:
        return self._request("GET", "/healthz")

    def train(self, cfg: ExperimentConfig) -> dict:
        return self._request("POST", "/train", {"config": cfg.model_dump()})

    def evaluate(self, cfg: ExperimentConfig, checkpoint: str,
                 mode: str | None = None, calibrated: bool | None = None) -> dict:
        return self._request("POST", "/eval", {"config": cfg.model_dump(),
                                               "checkpoint": checkpoint,
                                               "mode": mode,
                                               "calibrated": calibrated})

    def calibrate(self, cfg: ExperimentConfig, checkpoint: str) -> dict:
        return self._request("POST", "/calibrate", {"config": cfg.model_dump(),
                                                    "checkpoint": checkpoint})

    def ablate(self, cfg: ExperimentConfig, sweep: str) -> dict:
        return self._request("POST", "/ablate", {"config": cfg.model_dump(),
                                                 "sweep": sweep})

    def report(self, cfg: ExperimentConfig, checkpoint: str) -> dict:
        return self._request("POST", "/report", {"config": cfg.model_dump(),
                                                 "checkpoint": checkpoint})

    def selftest(self, seed: int = 0, inject_bug: str | None = None) -> dict:
        return self._request("POST", "/selftest", {"seed": seed,
                                                   "inject_bug": inject_bug})

    def job(self, job_id: str) -> dict:
        return self._request("GET", f"/jobs/{job_id}")

    def wait(self, job_id: str, poll: float = 1.0, timeout: float | None = None,
             log=None) -> dict:
        """Poll until the job leaves 'running', streaming new log lines."""
        seen = 0
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            status = self.job(job_id)
            if log is not None:
                for line in status["log"][seen:]:
                    log(line)
                seen = len(status["log"])
            if status["status"] != "running":
                return status
            if deadline is not None and time.monotonic() > deadline:
                raise TimeoutError(f"job {job_id} still running after {timeout}s")
            time.sleep(poll)
