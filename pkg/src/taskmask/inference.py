"""Prediction paths: rotation-ensembled per-task outputs, within-task and
across-task argmax, novelty scores, and task detection."""

from __future__ import annotations

import numpy as np

from .augment import rotate_batch
from .calibration import CalibrationParams


def ensemble_logits(model, x, task_id: int) -> np.ndarray:
    """Per-class output averaged over rotated replicas.

    Class j's score is the mean over rotations r of column j*R+r of the head
    evaluated on x rotated by r quarter turns. Accumulated in float64.
    """
    x = np.asarray(x)
    R = model.n_rotations
    n_cls = len(model.task_classes[task_id])
    out = np.zeros((len(x), n_cls), dtype=np.float64)
    for r in range(R):
        logits = model.rotation_logits(rotate_batch(x, 90 * r), task_id).astype(np.float64)
        out += logits[:, np.arange(n_cls) * R + r]
    return out / R


def task_outputs(model, x, task_id: int,
                 calibration: CalibrationParams | None = None) -> np.ndarray:
    """Ensembled logits with the task's affine correction applied, if any."""
    logits = ensemble_logits(model, x, task_id)
    if calibration is None:
        return logits
    return calibration.scale(task_id) * logits + calibration.shift(task_id)


def concat_outputs(model, x, calibration: CalibrationParams | None = None) -> np.ndarray:
    """All tasks' (optionally calibrated) outputs side by side, task order."""
    if not model.tasks:
        raise ValueError("no tasks registered")
    return np.hstack([task_outputs(model, x, t, calibration) for t in model.tasks])


def global_classes(model) -> list[int]:
    """Original class id for each column of the concatenated output."""
    return [c for t in model.tasks for c in model.task_classes[t]]


def predict_til(model, x, task_id: int,
                calibration: CalibrationParams | None = None) -> np.ndarray:
    """Within-task prediction: local class index under the known task's head.
    A per-task affine correction cannot change this argmax; it is accepted
    here so the invariance is testable."""
    return np.argmax(task_outputs(model, x, task_id, calibration), axis=1)


def predict_cil(model, x, calibration: CalibrationParams | None = None) -> np.ndarray:
    """Across-task prediction: global class id from the concatenated argmax."""
    cols = np.argmax(concat_outputs(model, x, calibration), axis=1)
    return np.asarray(global_classes(model))[cols]


def ood_score(model, x, task_id: int, calibration: CalibrationParams | None = None,
              kind: str = "logit") -> np.ndarray:
    """Familiarity of x to the task: max over its classes of the (calibrated)
    ensembled output, optionally squashed through that task's softmax."""
    out = task_outputs(model, x, task_id, calibration)
    if kind == "softmax":
        shifted = out - out.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=1, keepdims=True)
    elif kind != "logit":
        raise ValueError(f"score kind must be 'logit' or 'softmax', got {kind!r}")
    return out.max(axis=1)


def detect_task(model, x, calibration: CalibrationParams | None = None):
    """Most familiar task per sample, with the local prediction under it."""
    scores = np.stack([ood_score(model, x, t, calibration) for t in model.tasks], axis=1)
    picks = np.argmax(scores, axis=1)
    tasks = np.asarray(model.tasks)[picks]
    local = np.empty(len(np.asarray(x)), dtype=np.int64)
    for t in model.tasks:
        sel = tasks == t
        if sel.any():
            local[sel] = predict_til(model, np.asarray(x)[sel], t, calibration)
    return tasks, local
