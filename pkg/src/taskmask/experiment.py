"""Config-driven runs: sequential task training with per-task checkpoints,
TIL/CIL evaluation, calibration fitting, and the ablation sweeps. Every CSV
gets a sibling <name>.config.json holding the exact resolved config."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import inference
from .calibration import fit_calibration
from .config import ExperimentConfig, dump_config
from .contrastive import train_task_representation
from .data import (MemoryBuffer, TaskDataset, load_mnist, make_synthetic_tasks,
                   make_task_sequence, update_memory)
from .finetune import train_task_classifier
from .metrics import (AccuracyMatrix, auc, average_accuracy,
                      average_incremental_accuracy, forgetting_from_matrix,
                      task_detection_rate)
from .model import ModelState

S_SWEEP = (1.0, 100.0, 700.0)
MEMORY_SWEEP = (0, 5, 10, 20)
AUGMENT_SWEEP = ("none", "hflip", "jitter", "crop", "rotation", "all")


def load_tasks(cfg: ExperimentConfig) -> list[TaskDataset]:
    d = cfg.data
    if d.source == "mnist":
        train_x, train_y, test_x, test_y = load_mnist(d.path)
        if d.max_per_class is not None:
            train_x, train_y = _subsample_per_class(train_x, train_y,
                                                    d.max_per_class, cfg.seed)
        return make_task_sequence(train_x, train_y, d.classes_per_task, cfg.seed,
                                  val_fraction=d.val_fraction,
                                  test_images=test_x, test_labels=test_y)
    return make_synthetic_tasks(d.n_tasks, d.classes_per_task, d.dim,
                                d.samples_per_class, cfg.seed,
                                val_fraction=d.val_fraction,
                                test_per_class=d.test_per_class)


def _subsample_per_class(x: np.ndarray, y: np.ndarray, per_class: int, seed):
    rng = np.random.default_rng(np.random.SeedSequence((seed, 77)))
    keep = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) > per_class:
            idx = np.sort(rng.choice(idx, size=per_class, replace=False))
        keep.append(idx)
    keep = np.concatenate(keep)
    return x[keep], y[keep]


def _build_model(cfg: ExperimentConfig, tasks: list[TaskDataset]) -> ModelState:
    input_dim = int(np.prod(tasks[0].train_x.shape[1:], dtype=np.int64))
    return ModelState(input_dim=input_dim, hidden_width=cfg.model.hidden_width,
                      depth=cfg.model.depth, proj_dim=cfg.model.proj_dim,
                      seed=cfg.seed, n_rotations=4 if cfg.augment.rotations else 1,
                      s_max=cfg.masknet.s_max)


def _finetune_augment(cfg: ExperimentConfig):
    if cfg.train.finetune_views:
        return cfg.augment.build()
    return cfg.augment.build(hflip_p=0.0, jitter_p=0.0, pad=0, noise_sigma=0.0)


def train_one_task(model: ModelState, task: TaskDataset, cfg: ExperimentConfig,
                   memory: MemoryBuffer, log=None) -> None:
    """Both training stages, mask accumulation, and the memory update."""
    model.register_task(task.task_id, task.classes)
    train_task_representation(
        model, task, epochs=cfg.train.contrastive_epochs, batch_size=cfg.train.batch,
        tau=cfg.train.tau, lam=cfg.task_lambda(task.task_id), seed=cfg.seed,
        augment_cfg=cfg.augment.build(), base_lr=cfg.train.base_lr,
        peak_lr=cfg.train.peak_lr, warmup_epochs=cfg.train.warmup_epochs,
        momentum=cfg.train.momentum, anneal=cfg.masknet.anneal,
        compensation=cfg.masknet.embedding_compensation, log=log)
    train_task_classifier(
        model, task, epochs=cfg.train.finetune_epochs, batch_size=cfg.train.batch,
        lr=cfg.train.finetune_lr, seed=cfg.seed,
        augment_cfg=_finetune_augment(cfg), momentum=cfg.train.momentum, log=log)
    model.commit_task_mask(task.task_id)
    update_memory(memory, task, cfg.memory.per_class, cfg.seed)


def til_accuracy(model, task: TaskDataset) -> float:
    pred = inference.predict_til(model, task.test_x, task.task_id)
    return float(np.mean(pred == task.test_y))


def cil_accuracy(model, tasks: list[TaskDataset], calibration=None) -> float:
    x = np.concatenate([t.test_x for t in tasks])
    truth = np.concatenate([np.asarray(t.classes)[t.test_y] for t in tasks])
    return float(np.mean(inference.predict_cil(model, x, calibration) == truth))


def per_task_auc(model, tasks: list[TaskDataset], task_id: int,
                 kind: str = "logit") -> float:
    """Separation of the task's own test data from every other task's."""
    own = next(t for t in tasks if t.task_id == task_id)
    others = [t.test_x for t in tasks if t.task_id != task_id]
    if not others:
        raise ValueError("need at least two tasks for a separation score")
    in_scores = inference.ood_score(model, own.test_x, task_id, kind=kind)
    out_scores = inference.ood_score(model, np.concatenate(others), task_id, kind=kind)
    return auc(in_scores, out_scores)


def _write_csv(path: Path, header: list[str], rows: list[list], cfg: ExperimentConfig):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    dump_config(cfg, path.with_suffix(".config.json"))


def run_train(cfg: ExperimentConfig, out_dir: str | Path, log=None) -> ckpt.ExperimentState:
    """Train the whole sequence; one checkpoint per task, TIL matrix as CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = load_tasks(cfg)
    model = _build_model(cfg, tasks)
    memory = MemoryBuffer()
    matrix = AccuracyMatrix(len(tasks))
    state = ckpt.ExperimentState(model=model, memory=memory, matrix=matrix,
                                 config=cfg.model_dump(), cursor={"seed": cfg.seed,
                                                                  "tasks_trained": 0})
    for task in tasks:
        try:
            train_one_task(model, task, cfg, memory, log=log)
        except Exception as err:
            raise RuntimeError(f"training failed at task {task.task_id}: {err}") from err
        for earlier in tasks[:task.task_id]:
            matrix.record(earlier.task_id - 1, task.task_id - 1,
                          til_accuracy(model, earlier))
        state.cursor["tasks_trained"] = task.task_id
        ckpt.save(state, out / f"task{task.task_id}.ckpt")
        if log is not None:
            log(f"task {task.task_id}: saved checkpoint, "
                f"avg TIL {average_accuracy(matrix, task.task_id - 1):.4f}")

    header = ["task"] + [f"after_{k}" for k in range(1, len(tasks) + 1)]
    rows = [[t.task_id] + ["" if np.isnan(v) else f"{v:.6f}"
                           for v in matrix.values[t.task_id - 1]] for t in tasks]
    _write_csv(out / "matrix.csv", header, rows, cfg)
    return state


def run_eval(cfg: ExperimentConfig, checkpoint_path: str | Path, out_dir: str | Path,
             mode: str | None = None, calibrated: bool | None = None) -> Path:
    """Accuracy (til or cil), separation AUC, and detection rate per task."""
    mode = cfg.eval.mode if mode is None else mode
    calibrated = cfg.eval.calibrated if calibrated is None else calibrated
    if mode not in ("til", "cil"):
        raise ValueError(f"mode must be 'til' or 'cil', got {mode!r}")
    state = ckpt.load(checkpoint_path)
    calibration = None
    if calibrated:
        if state.calibration is None:
            raise RuntimeError("checkpoint holds no calibration; run calibrate first")
        calibration = state.calibration
    tasks = [t for t in load_tasks(cfg) if t.task_id in state.model.task_classes]
    if not tasks:
        raise RuntimeError("config data has no tasks in common with the checkpoint")
    model = state.model

    rows = []
    accs = []
    for task in tasks:
        if mode == "til":
            acc = til_accuracy(model, task)
        else:
            acc = cil_accuracy(model, [task], calibration)
        accs.append(acc)
        rows.append([f"accuracy_{mode}", task.task_id, f"{acc:.6f}"])
    rows.append([f"accuracy_{mode}", "all", f"{np.mean(accs):.6f}"])

    if len(tasks) > 1:
        aucs = [per_task_auc(model, tasks, t.task_id, cfg.eval.score) for t in tasks]
        for task, v in zip(tasks, aucs):
            rows.append(["auc", task.task_id, f"{v:.6f}"])
        rows.append(["auc", "all", f"{np.mean(aucs):.6f}"])

        detected, _ = inference.detect_task(
            model, np.concatenate([t.test_x for t in tasks]), calibration)
        truth = np.concatenate([np.full(len(t.test_x), t.task_id) for t in tasks])
        rates = [task_detection_rate(detected[truth == t.task_id],
                                     truth[truth == t.task_id]) for t in tasks]
        for task, v in zip(tasks, rates):
            rows.append(["detection_rate", task.task_id, f"{v:.6f}"])
        rows.append(["detection_rate", "all",
                     f"{task_detection_rate(detected, truth):.6f}"])

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"eval_{mode}.csv"
    _write_csv(path, ["metric", "task", "value"], rows, cfg)
    return path


def run_calibrate(cfg: ExperimentConfig, checkpoint_path: str | Path,
                  out_dir: str | Path, log=None) -> Path:
    """Fit the per-task affine correction on the checkpoint's memory buffer
    and write a new checkpoint that carries it."""
    state = ckpt.load(checkpoint_path)
    state.calibration = fit_calibration(
        state.model, state.memory, iterations=cfg.calib.iterations,
        lr=cfg.calib.lr, batch_size=cfg.calib.batch, seed=cfg.seed, log=log)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "calibrated.ckpt"
    ckpt.save(state, path)
    rows = [[t, f"{s:.6f}", f"{m:.6f}"] for t, s, m in
            zip(state.calibration.tasks, state.calibration.sigma, state.calibration.mu)]
    _write_csv(out / "calibration.csv", ["task", "sigma", "mu"], rows, cfg)
    return path


def _sweep_cil(model, tasks, memory, cfg) -> float:
    calibration = None
    if len(memory):
        calibration = fit_calibration(model, memory, iterations=cfg.calib.iterations,
                                      lr=cfg.calib.lr, batch_size=cfg.calib.batch,
                                      seed=cfg.seed)
    return cil_accuracy(model, tasks, calibration)


def _train_for_sweep(cfg: ExperimentConfig, log=None):
    tasks = load_tasks(cfg)
    model = _build_model(cfg, tasks)
    memory = MemoryBuffer()
    matrix = AccuracyMatrix(len(tasks))
    for task in tasks:
        train_one_task(model, task, cfg, memory, log=log)
        for earlier in tasks[:task.task_id]:
            matrix.record(earlier.task_id - 1, task.task_id - 1,
                          til_accuracy(model, earlier))
    return model, tasks, memory, matrix


def _augment_variant(cfg: ExperimentConfig, name: str) -> ExperimentConfig:
    base = cfg.augment
    off = {"hflip_p": 0.0, "jitter_p": 0.0, "pad": 0, "noise_sigma": 0.0,
           "rotations": False, "center_crop": base.center_crop}
    keep = {"none": {},
            "hflip": {"hflip_p": base.hflip_p},
            # noise is the vector-data analog of photometric jitter
            "jitter": {"jitter_p": base.jitter_p, "noise_sigma": base.noise_sigma},
            "crop": {"pad": base.pad},
            "rotation": {"rotations": base.rotations}}
    if name == "all":
        return cfg
    return cfg.model_copy(update={"augment": base.model_copy(update={**off, **keep[name]})},
                          deep=True)


def run_ablation(cfg: ExperimentConfig, sweep: str, out_dir: str | Path, log=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if sweep == "s":
        rows = []
        for s in S_SWEEP:
            point = cfg.model_copy(deep=True)
            point.masknet.s_max = s
            model, tasks, memory, matrix = _train_for_sweep(point, log=log)
            forgetting = forgetting_from_matrix(matrix, len(tasks))
            aucs = np.mean([per_task_auc(model, tasks, t.task_id, cfg.eval.score)
                            for t in tasks])
            rows.append([s, f"{forgetting:.6f}", f"{aucs:.6f}",
                         f"{_sweep_cil(model, tasks, memory, point):.6f}"])
            if log is not None:
                log(f"s={s}: forgetting {rows[-1][1]}, auc {rows[-1][2]}, cil {rows[-1][3]}")
        path = out / "ablation_s.csv"
        _write_csv(path, ["s_max", "forgetting", "auc", "cil"], rows, cfg)
        return path

    if sweep == "memory":
        # the buffer only feeds calibration, so one trained model serves all rows
        model, tasks, _, _ = _train_for_sweep(cfg, log=log)
        rows = []
        for per_class in MEMORY_SWEEP:
            memory = MemoryBuffer()
            for task in tasks:
                update_memory(memory, task, per_class, cfg.seed)
            rows.append([per_class, f"{_sweep_cil(model, tasks, memory, cfg):.6f}"])
            if log is not None:
                log(f"per_class={per_class}: cil {rows[-1][1]}")
        path = out / "ablation_memory.csv"
        _write_csv(path, ["per_class", "cil"], rows, cfg)
        return path

    if sweep == "augment":
        rows = []
        for name in AUGMENT_SWEEP:
            point = _augment_variant(cfg, name)
            model, tasks, memory, _ = _train_for_sweep(point, log=log)
            til = np.mean([til_accuracy(model, t) for t in tasks])
            rows.append([name, f"{til:.6f}",
                         f"{_sweep_cil(model, tasks, memory, point):.6f}"])
            if log is not None:
                log(f"augment={name}: til {rows[-1][1]}, cil {rows[-1][2]}")
        path = out / "ablation_augment.csv"
        _write_csv(path, ["augmentations", "til", "cil"], rows, cfg)
        return path

    raise ValueError(f"sweep must be 's', 'memory', or 'augment', got {sweep!r}")


def run_report(cfg: ExperimentConfig, checkpoint_path: str | Path,
               out_dir: str | Path) -> Path:
    """Summarize a run from its checkpoint: per-checkpoint averages,
    forgetting, incremental average, and any calibration parameters."""
    state = ckpt.load(checkpoint_path)
    if state.matrix is None:
        raise RuntimeError("checkpoint holds no accuracy matrix; run train first")
    values = state.matrix.values
    trained = state.cursor.get("tasks_trained", len(values))

    rows = []
    for k in range(trained):
        rows.append(["average_accuracy", f"after_{k + 1}",
                     f"{average_accuracy(values, k):.6f}"])
    if trained >= 2:
        rows.append(["forgetting", f"after_{trained}",
                     f"{forgetting_from_matrix(values, trained):.6f}"])
        sub = values[:trained, :trained]
        rows.append(["avg_incremental_accuracy", "all",
                     f"{average_incremental_accuracy(sub, trained):.6f}"])
    if state.calibration is not None:
        for t, s, m in zip(state.calibration.tasks, state.calibration.sigma,
                           state.calibration.mu):
            rows.append(["sigma", t, f"{s:.6f}"])
            rows.append(["mu", t, f"{m:.6f}"])

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.csv"
    _write_csv(path, ["metric", "task", "value"], rows, cfg)
    return path
