"""Stage-2 training: the rotation-class classifier head on top of the frozen
masked trunk."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .augment import AugmentConfig, build_contrastive_batch
from .data import TaskDataset
from .optim import SGD, milestone_lr


def train_task_classifier(model, task: TaskDataset, *, epochs: int, batch_size: int,
                          lr: float, seed: int, augment_cfg: AugmentConfig | None = None,
                          momentum: float = 0.9, log=None) -> list[float]:
    """Train the task's linear head by cross-entropy over its rotation classes.

    The trunk and attention embeddings stay frozen: features are computed off
    the gradient tape at the saturation temperature, and only the head's
    parameters enter the optimizer. Returns the mean loss per epoch.
    """
    if epochs < 1:
        raise ValueError("need at least one epoch")
    task_id = task.task_id
    cfg = augment_cfg or AugmentConfig()
    expected = task.n_classes * (4 if cfg.rotations else 1)
    if expected != model.head_dim(task_id):
        raise ValueError(
            f"head width {model.head_dim(task_id)} does not match "
            f"{expected} rotation classes implied by the augment config")
    W = model.params[f"head.{task_id}.W"]
    bias = model.params[f"head.{task_id}.b"]
    opt = SGD({f"head.{task_id}.W": W, f"head.{task_id}.b": bias}, momentum=momentum)

    epoch_losses = []
    n = len(task.train_x)
    for epoch in range(epochs):
        step_lr = milestone_lr(epoch, lr, epochs)
        rng = np.random.default_rng(np.random.SeedSequence((seed, task_id, 2, epoch)))
        order = rng.permutation(n)
        n_batches = max(1, int(np.ceil(n / batch_size)))
        total = 0.0
        for b in range(n_batches):
            idx = order[b * batch_size:(b + 1) * batch_size]
            batch = build_contrastive_batch(task.train_x[idx], task.train_y[idx], rng, cfg)
            feats = model.masked_forward(batch.samples, task_id, model.s_max).data
            with ad.GradTape() as tape:
                logits = ad.add(ad.matmul(ad.Tensor(feats), W), bias)
                loss = ad.softmax_cross_entropy(logits, batch.labels)
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss {value} at task {task_id} epoch {epoch} batch {b}")
            tape.backward(loss)
            opt.step(step_lr)
            total += value
        epoch_losses.append(total / n_batches)
        if log is not None:
            log(f"task {task_id} classifier epoch {epoch + 1}/{epochs} "
                f"lr {step_lr:.4f} loss {epoch_losses[-1]:.4f}")
    return epoch_losses
