"""Harness-level behavior on a small synthetic sequence: artifact layout,
seed determinism, eval consistency with the direct metrics, and the sweep
table shapes."""

import csv

import numpy as np
import pytest

from taskmask import experiment as ex
from taskmask.config import ExperimentConfig
from taskmask.data import MemoryBuffer

TINY = {
    "data": {"source": "synthetic", "n_tasks": 2, "dim": 6, "classes_per_task": 2,
             "samples_per_class": 60, "test_per_class": 30},
    "model": {"hidden_width": 32, "depth": 2, "proj_dim": 16},
    "train": {"contrastive_epochs": 3, "finetune_epochs": 2, "batch": 64,
              "peak_lr": 0.3, "base_lr": 0.05, "warmup_epochs": 1},
    "calib": {"iterations": 40},
    "memory": {"per_class": 5},
    "seed": 0,
}


def tiny_config(**extra):
    return ExperimentConfig.model_validate({**TINY, **extra})


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ex_run")
    cfg = tiny_config()
    state = ex.run_train(cfg, out)
    return cfg, out, state


def test_run_train_artifacts(run):
    _, out, state = run
    assert (out / "task1.ckpt").exists() and (out / "task2.ckpt").exists()
    assert (out / "matrix.csv").exists() and (out / "matrix.config.json").exists()
    assert state.cursor["tasks_trained"] == 2
    assert not np.isnan(np.diag(state.matrix.values)).any()


def test_run_train_same_seed_is_bit_identical(run, tmp_path):
    cfg, out, state = run
    again = ex.run_train(tiny_config(), tmp_path)
    assert np.array_equal(state.matrix.values, again.matrix.values, equal_nan=True)
    assert (out / "task2.ckpt").read_bytes() == (tmp_path / "task2.ckpt").read_bytes()


def test_run_train_seed_changes_result(run, tmp_path):
    _, _, state = run
    other = ex.run_train(tiny_config(seed=1), tmp_path)
    assert not np.array_equal(state.matrix.values, other.matrix.values,
                              equal_nan=True)


def test_eval_matches_direct_metrics(run, tmp_path):
    cfg, out, state = run
    path = ex.run_eval(cfg, out / "task2.ckpt", tmp_path, mode="til")
    rows = {(r["metric"], r["task"]): float(r["value"])
            for r in csv.DictReader(path.open())}
    tasks = ex.load_tasks(cfg)
    direct = [ex.til_accuracy(state.model, t) for t in tasks]
    for t, acc in zip(tasks, direct):
        assert rows[("accuracy_til", str(t.task_id))] == pytest.approx(acc, abs=1e-6)
    assert rows[("accuracy_til", "all")] == pytest.approx(np.mean(direct), abs=1e-6)


def test_empty_memory_means_uncalibrated_cil(run):
    cfg, _, state = run
    tasks = ex.load_tasks(cfg)
    plain = ex.cil_accuracy(state.model, tasks, None)
    assert ex._sweep_cil(state.model, tasks, MemoryBuffer(), cfg) == plain


def test_auc_needs_two_tasks(run):
    cfg, _, state = run
    tasks = ex.load_tasks(cfg)
    with pytest.raises(ValueError, match="two tasks"):
        ex.per_task_auc(state.model, tasks[:1], 1)


def test_report_from_checkpoint(run, tmp_path):
    cfg, out, _ = run
    path = ex.run_report(cfg, out / "task2.ckpt", tmp_path)
    metrics = [r["metric"] for r in csv.DictReader(path.open())]
    assert metrics.count("average_accuracy") == 2
    assert "forgetting" in metrics
    assert "avg_incremental_accuracy" in metrics


def test_s_sweep_table(tmp_path):
    cfg = tiny_config(train={**TINY["train"], "contrastive_epochs": 2,
                             "finetune_epochs": 1})
    path = ex.run_ablation(cfg, "s", tmp_path)
    rows = list(csv.DictReader(path.open()))
    assert [r["s_max"] for r in rows] == ["1.0", "100.0", "700.0"]
    for r in rows:
        assert set(r) == {"s_max", "forgetting", "auc", "cil"}
        assert 0.0 <= float(r["auc"]) <= 1.0


def test_augment_sweep_table(tmp_path):
    cfg = tiny_config(train={**TINY["train"], "contrastive_epochs": 2,
                             "finetune_epochs": 1})
    path = ex.run_ablation(cfg, "augment", tmp_path)
    rows = list(csv.DictReader(path.open()))
    assert [r["augmentations"] for r in rows] == list(ex.AUGMENT_SWEEP)


def test_unknown_sweep_rejected(tmp_path):
    with pytest.raises(ValueError, match="sweep"):
        ex.run_ablation(tiny_config(), "dropout", tmp_path)


def test_augment_variant_isolation():
    cfg = tiny_config()
    rotation_only = ex._augment_variant(cfg, "rotation").augment
    assert rotation_only.rotations and rotation_only.hflip_p == 0.0
    assert rotation_only.pad == 0 and rotation_only.noise_sigma == 0.0
    none = ex._augment_variant(cfg, "none").augment
    assert not none.rotations and none.jitter_p == 0.0
    assert ex._augment_variant(cfg, "all").augment == cfg.augment
