"""End-to-end behaviour of the two training stages on synthetic tasks."""

import numpy as np
import pytest

from taskmask.augment import AugmentConfig, build_contrastive_batch
from taskmask.contrastive import train_task_representation
from taskmask.data import make_synthetic_tasks
from taskmask.finetune import train_task_classifier
from taskmask.model import ModelState
from taskmask import reference as ref

CFG = AugmentConfig(noise_sigma=0.1)


def _fresh(tasks=1, width=48, depth=2, seed=0, n_rotations=4):
    data = make_synthetic_tasks(n_tasks=tasks, classes_per_task=2, dim=6,
                                samples_per_class=60, seed=seed)
    model = ModelState(input_dim=6, hidden_width=width, depth=depth, proj_dim=16,
                       seed=seed, n_rotations=n_rotations, s_max=700.0)
    return model, data


def _train_one(model, task, *, epochs=10, lam=0.25, seed=0, peak_lr=0.3):
    losses = train_task_representation(
        model, task, epochs=epochs, batch_size=32, tau=0.07, lam=lam, seed=seed,
        augment_cfg=CFG, base_lr=0.05, peak_lr=peak_lr, warmup_epochs=2)
    train_task_classifier(model, task, epochs=8, batch_size=32, lr=0.1, seed=seed,
                          augment_cfg=CFG)
    return losses


def test_contrastive_loss_decreases():
    model, data = _fresh()
    model.register_task(1, data[0].classes)
    losses = train_task_representation(
        model, data[0], epochs=8, batch_size=32, tau=0.07, lam=0.25, seed=0,
        augment_cfg=CFG, base_lr=0.05, peak_lr=0.3, warmup_epochs=2)
    assert losses[-1] < losses[0]


def test_features_stay_linearly_separable():
    model, data = _fresh()
    task = data[0]
    model.register_task(1, task.classes)
    _train_one(model, task)
    after = ref.linear_probe_accuracy(
        model.masked_forward(task.train_x, 1, 700.0).data.astype(np.float64), task.train_y,
        model.masked_forward(task.test_x, 1, 700.0).data.astype(np.float64), task.test_y)
    assert after >= 0.95


def test_classifier_fits_rotation_classes():
    model, data = _fresh()
    task = data[0]
    model.register_task(1, task.classes)
    _train_one(model, task)
    batch = build_contrastive_batch(task.test_x, task.test_y, 123, CFG)
    logits = model.rotation_logits(batch.samples, 1)
    acc = float(np.mean(np.argmax(logits, axis=1) == batch.labels))
    assert acc >= 0.9


def test_embeddings_stay_clamped():
    model, data = _fresh()
    model.register_task(1, data[0].classes)
    _train_one(model, data[0])
    for e in model.embedding_tensors(1):
        assert np.all(np.abs(e.data) <= 6.0)


def test_hard_masked_weights_are_bit_identical_across_next_task():
    model, data = _fresh(tasks=2)
    model.register_task(1, data[0].classes)
    _train_one(model, data[0])
    model.commit_task_mask(1)

    # protected coordinates: gate exactly zero at the saturation temperature
    from taskmask.masking import trunk_gates
    gates = trunk_gates(model.acc_mask, model.input_dim)
    frozen = {name: (gates[name] == 0.0, model.params[name].data.copy())
              for name in gates if (gates[name] == 0.0).any()}
    assert frozen, "expected some fully saturated attention after training"

    model.register_task(2, data[1].classes)
    _train_one(model, data[1], lam=0.1, seed=1)
    for name, (where, before) in frozen.items():
        after = model.params[name].data
        assert np.array_equal(before[where], after[where]), name


def test_head_training_leaves_trunk_untouched():
    model, data = _fresh()
    task = data[0]
    model.register_task(1, task.classes)
    snapshot = {k: v.data.copy() for k, v in model.params.items()
                if not k.startswith("head.")}
    train_task_classifier(model, task, epochs=2, batch_size=32, lr=0.1, seed=0,
                          augment_cfg=CFG)
    for k, before in snapshot.items():
        assert np.array_equal(before, model.params[k].data), k


def test_classifier_head_width_guard():
    model, data = _fresh(n_rotations=4)
    model.register_task(1, data[0].classes)
    bad = AugmentConfig(noise_sigma=0.1, rotations=False)
    with pytest.raises(ValueError, match="head width"):
        train_task_classifier(model, data[0], epochs=1, batch_size=32, lr=0.1,
                              seed=0, augment_cfg=bad)


def test_nonfinite_loss_reports_position():
    model, data = _fresh()
    model.register_task(1, data[0].classes)
    model.params["trunk.0.W"].data[:] = np.nan
    with pytest.raises(FloatingPointError, match="task 1 epoch 0 batch 0"):
        train_task_representation(
            model, data[0], epochs=1, batch_size=32, tau=0.07, lam=0.25, seed=0,
            augment_cfg=CFG)


def test_training_is_deterministic_in_the_seed():
    results = []
    for _ in range(2):
        model, data = _fresh()
        model.register_task(1, data[0].classes)
        _train_one(model, data[0], epochs=2)
        results.append({k: v.data.copy() for k, v in model.params.items()})
    for k in results[0]:
        assert np.array_equal(results[0][k], results[1][k]), k
