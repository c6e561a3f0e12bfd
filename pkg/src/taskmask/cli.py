"""Command line entry point.

Every subcommand runs in-process by default; with --server URL it becomes a
thin client of a running service instead. Exit codes: 0 success, 1 usage or
validation error, 2 runtime failure.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
from pydantic import ValidationError

from .client import ServiceClient, ServiceError
from .config import ExperimentConfig, load_config
from .experiment import (run_ablation, run_calibrate, run_eval, run_report,
                         run_train)
from .selftest import run_selftest


class _Failure(Exception):
    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


def _load(config_path, seed, out) -> ExperimentConfig:
    try:
        cfg = load_config(config_path) if config_path else ExperimentConfig()
    except (ValidationError, ValueError, OSError) as err:
        raise click.UsageError(f"bad config: {err}") from err
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out = out
    return cfg


def _run(fn):
    """Execute one harness operation, mapping failures to exit code 2
    (or the server's own classification for remote calls)."""
    try:
        return fn()
    except ServiceError as err:
        raise _Failure(str(err), 1 if err.status_code < 500 else 2) from err
    except Exception as err:
        raise _Failure(f"{type(err).__name__}: {err}") from err


def _checkpoint_arg(server, checkpoint):
    if server is None and not Path(checkpoint).is_file():
        raise click.UsageError(f"checkpoint {checkpoint} does not exist")
    return checkpoint


def _finish_job(client: ServiceClient, job: dict) -> dict:
    status = _run(lambda: client.wait(job["id"], log=click.echo))
    if status["status"] != "done":
        raise _Failure(status["error"] or "job failed")
    return status["result"]


def _common(fn):
    for opt in reversed([
        click.option("--config", "config_path",
                     type=click.Path(exists=True, dir_okay=False), default=None,
                     help="TOML or JSON experiment config."),
        click.option("--seed", type=int, default=None,
                     help="Override the config seed."),
        click.option("--out", type=click.Path(file_okay=False), default=None,
                     help="Override the output directory."),
        click.option("--server", default=None, metavar="URL",
                     help="Send the command to a running service instead."),
    ]):
        fn = opt(fn)
    return fn


@click.group()
def cli():
    """Continual learning over masked task heads: train a task sequence,
    evaluate it with or without the task id, calibrate the cross-task
    outputs, and reproduce the ablation tables."""


@cli.command()
@_common
def train(config_path, seed, out, server):
    """Train the configured task sequence; one checkpoint per task."""
    cfg = _load(config_path, seed, out)
    if server:
        with ServiceClient(server) as client:
            result = _finish_job(client, _run(lambda: client.train(cfg)))
        click.echo(json.dumps(result, indent=2))
        return 0
    state = _run(lambda: run_train(cfg, cfg.out, log=click.echo))
    click.echo(f"trained {state.cursor['tasks_trained']} tasks; "
               f"checkpoints and matrix.csv in {cfg.out}")
    return 0


@cli.command("eval")
@_common
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--mode", type=click.Choice(["til", "cil"]), default=None,
              help="Prediction rule; defaults to the config's eval.mode.")
@click.option("--calibrated/--uncalibrated", default=None,
              help="Apply the checkpoint's calibration (cil only).")
def evaluate(config_path, seed, out, server, checkpoint, mode, calibrated):
    """Evaluate a checkpoint: accuracy, separation AUC, detection rate."""
    cfg = _load(config_path, seed, out)
    checkpoint = _checkpoint_arg(server, checkpoint)
    if server:
        with ServiceClient(server) as client:
            result = _run(lambda: client.evaluate(cfg, checkpoint, mode, calibrated))
        click.echo(result["path"])
        return 0
    path = _run(lambda: run_eval(cfg, checkpoint, cfg.out, mode=mode,
                                 calibrated=calibrated))
    click.echo(str(path))
    return 0


@cli.command()
@_common
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
def calibrate(config_path, seed, out, server, checkpoint):
    """Fit per-task output calibration on the checkpoint's memory buffer."""
    cfg = _load(config_path, seed, out)
    checkpoint = _checkpoint_arg(server, checkpoint)
    if server:
        with ServiceClient(server) as client:
            result = _run(lambda: client.calibrate(cfg, checkpoint))
        click.echo(result["path"])
        return 0
    path = _run(lambda: run_calibrate(cfg, checkpoint, cfg.out, log=click.echo))
    click.echo(str(path))
    return 0


@cli.command()
@_common
@click.option("--sweep", required=True, type=click.Choice(["s", "memory", "augment"]))
def ablate(config_path, seed, out, server, sweep):
    """Run one ablation sweep and write its CSV table."""
    cfg = _load(config_path, seed, out)
    if server:
        with ServiceClient(server) as client:
            result = _finish_job(client, _run(lambda: client.ablate(cfg, sweep)))
        click.echo(result["path"])
        return 0
    path = _run(lambda: run_ablation(cfg, sweep, cfg.out, log=click.echo))
    click.echo(str(path))
    return 0


@cli.command()
@click.option("--seed", type=int, default=0)
@click.option("--server", default=None, metavar="URL")
@click.option("--inject-bug", type=click.Choice(["gradient"]), default=None,
              help="Deliberately break a gradient; the suite must fail.")
def selftest(seed, server, inject_bug):
    """Check the implementation against its built-in oracles."""
    if server:
        with ServiceClient(server) as client:
            result = _run(lambda: client.selftest(seed, inject_bug))
        for line in result["log"]:
            click.echo(line)
        return 0 if result["ok"] else 2
    ok = _run(lambda: run_selftest(seed=seed, inject_bug=inject_bug, log=click.echo))
    return 0 if ok else 2


@cli.command()
@_common
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
def report(config_path, seed, out, server, checkpoint):
    """Summarize a trained checkpoint: averages, forgetting, calibration."""
    cfg = _load(config_path, seed, out)
    checkpoint = _checkpoint_arg(server, checkpoint)
    if server:
        with ServiceClient(server) as client:
            result = _run(lambda: client.report(cfg, checkpoint))
        click.echo(result["path"])
        return 0
    path = _run(lambda: run_report(cfg, checkpoint, cfg.out))
    click.echo(str(path))
    return 0


@cli.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=host, port=port)
    return 0


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, standalone_mode=False)
        return rv if isinstance(rv, int) else 0
    except _Failure as err:
        click.echo(f"error: {err}", err=True)
        return err.code
    except click.exceptions.Exit as err:
        return err.exit_code
    except click.ClickException as err:
        err.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
