"""Stage-1 training: supervised contrastive learning of the masked trunk and
the task's projection head, under gradient gating and the attention sparsity
regularizer."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .augment import AugmentConfig, build_contrastive_batch
from .data import TaskDataset
from .losses import supcon_loss
from .masking import anneal_s, embedding_compensation, mask_regularizer, trunk_gates
from .optim import SGD, scheduled_lr

EMBEDDING_CLAMP = 6.0


def train_task_representation(model, task: TaskDataset, *, epochs: int, batch_size: int,
                              tau: float, lam: float, seed: int,
                              augment_cfg: AugmentConfig | None = None,
                              base_lr: float = 0.1, peak_lr: float = 1.0,
                              warmup_epochs: int = 10, momentum: float = 0.9,
                              anneal: bool = True, compensation: bool = True,
                              log=None) -> list[float]:
    """Train trunk, attention embeddings, and projection head for one task.

    Gradient gating uses the mask accumulated over earlier tasks, fixed for
    the whole stage; within each epoch the attention temperature ramps from
    1/s_max to s_max (anneal=False holds it at s_max). Embedding gradients
    are rescaled against sigmoid saturation unless compensation is off, and
    embeddings are clamped after each step. Returns the mean combined loss
    per epoch. The caller commits the task mask afterwards.
    """
    if epochs < 1:
        raise ValueError("need at least one epoch")
    task_id = task.task_id
    cfg = augment_cfg or AugmentConfig()
    gates = trunk_gates(model.acc_mask, model.input_dim)
    params = dict(model.trunk_params())
    params.update(model.task_params(task_id, groups=("emb", "proj")))
    opt = SGD(params, momentum=momentum)
    emb_tensors = model.embedding_tensors(task_id)
    # the ramp must fit inside the run
    warmup = min(warmup_epochs, epochs - 1) if epochs > 1 else 0

    epoch_losses = []
    n = len(task.train_x)
    for epoch in range(epochs):
        lr = scheduled_lr(epoch, base_lr, warmup, epochs, peak_lr) if epochs > 1 else peak_lr
        rng = np.random.default_rng(np.random.SeedSequence((seed, task_id, 1, epoch)))
        order = rng.permutation(n)
        n_batches = max(1, int(np.ceil(n / batch_size)))
        total = 0.0
        for b in range(n_batches):
            idx = order[b * batch_size:(b + 1) * batch_size]
            s = anneal_s(b, n_batches, model.s_max) if anneal else model.s_max
            batch = build_contrastive_batch(task.train_x[idx], task.train_y[idx], rng, cfg)
            with ad.GradTape() as tape:
                feats, attns = model.masked_forward(batch.samples, task_id, s, return_attn=True)
                z = model.project(feats, task_id)
                loss = ad.add(supcon_loss(z, batch.labels, tau),
                              mask_regularizer(attns, model.acc_mask, lam))
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss {value} at task {task_id} epoch {epoch} batch {b}")
            tape.backward(loss)
            if compensation:
                for e in emb_tensors:
                    if e.grad is not None:
                        e.grad = e.grad * embedding_compensation(e.data, s, model.s_max)
            opt.step(lr, gates)
            for e in emb_tensors:
                np.clip(e.data, -EMBEDDING_CLAMP, EMBEDDING_CLAMP, out=e.data)
            total += value
        epoch_losses.append(total / n_batches)
        if log is not None:
            log(f"task {task_id} contrastive epoch {epoch + 1}/{epochs} "
                f"lr {lr:.4f} loss {epoch_losses[-1]:.4f}")
    return epoch_losses
