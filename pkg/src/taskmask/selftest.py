"""Built-in verification: the fast implementations against their naive
oracles, plus the gating protection contract. Runs entirely on synthetic
data, prints one line per suite, and returns overall success. A deliberate
gradient bug can be injected so the suite's ability to fail is testable."""

from __future__ import annotations

from contextlib import contextmanager, nullcontext

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from . import inference, reference
from .augment import AugmentConfig, rotate_batch
from .contrastive import train_task_representation
from .data import make_synthetic_tasks
from .finetune import train_task_classifier
from .losses import supcon_loss
from .masking import trunk_gates
from .metrics import auc
from .model import ModelState

TOL_GRAD = 1e-4
TOL_MATCH = 1e-6


@contextmanager
def _broken_sigmoid():
    """Replace sigmoid's backward pass with one that is 1% off."""
    original = ad.sigmoid

    def bad_sigmoid(x):
        x = ad._as_tensor(x)
        out = ad.Tensor(expit(x.data))

        def backward(g):
            return (g * out.data * (1.0 - out.data) * 1.01,)

        return ad._emit(out, (x,), backward)

    ad.sigmoid = bad_sigmoid
    try:
        yield
    finally:
        ad.sigmoid = original


def _reval(build, values, index, x):
    args = [ad.Tensor(v if i != index else x) for i, v in enumerate(values)]
    return float(build(*args).data)


def _suite_gradients(rng) -> str | None:
    labels6 = rng.integers(0, 4, size=6)
    probe = rng.normal(0, 1, (4, 6))
    checks = [
        ("matmul", lambda a, b: ad.tsum(ad.matmul(a, b)), [(3, 4), (4, 2)]),
        ("add", lambda a, b: ad.tsum(ad.add(a, b)), [(3, 4), (4,)]),
        ("sub", lambda a, b: ad.tsum(ad.sub(a, b)), [(3, 4), (3, 1)]),
        ("mul", lambda a, b: ad.tsum(ad.mul(a, b)), [(3, 4), (4,)]),
        ("relu", lambda t: ad.tsum(ad.relu(ad.add(t, 0.05))), [(5, 3)]),
        ("sigmoid", lambda t: ad.tsum(ad.sigmoid(t)), [(5, 3)]),
        ("exp", lambda t: ad.tsum(ad.exp(t)), [(5, 3)]),
        ("dot", lambda a, b: ad.dot(a, b), [(6,), (6,)]),
        ("scale_shift", lambda x, a, b: ad.tsum(ad.scale_shift(x, a, b)),
         [(3, 4), (4,), (4,)]),
        ("sum", lambda t: ad.tsum(ad.mul(t, t)), [(3, 5)]),
        ("mean", lambda t: ad.tmean(ad.mul(t, t)), [(3, 5)]),
        ("mean_axis", lambda t: ad.tsum(ad.tmean(ad.mul(t, t), axis=1)), [(3, 5)]),
        ("logsumexp", lambda t: ad.tsum(ad.logsumexp(t, axis=1)), [(4, 6)]),
        ("softmax_cross_entropy",
         lambda t: ad.softmax_cross_entropy(t, labels6), [(6, 4)]),
        ("l2_normalize",
         lambda t: ad.tsum(ad.mul(ad.l2_normalize(t), probe)), [(4, 6)]),
        ("reshape", lambda t: ad.tsum(ad.mul(ad.reshape(t, (2, 6)),
                                             ad.reshape(t, (2, 6)))), [(3, 4)]),
    ]
    for name, build, shapes in checks:
        for point in range(5):
            values = [rng.normal(0, 0.6, shape) for shape in shapes]
            tensors = [ad.Tensor(v.copy(), requires_grad=True) for v in values]
            with ad.GradTape() as tape:
                loss = build(*tensors)
            tape.backward(loss)
            for i, (t, v) in enumerate(zip(tensors, values)):
                if t.grad is None:
                    return f"{name}: missing gradient for input {i}"
                numeric = reference.central_difference_gradient(
                    lambda x, i=i: _reval(build, values, i, x), v)
                err = reference.relative_error(t.grad, numeric)
                if err > TOL_GRAD:
                    return f"{name}: relative error {err:.2e} exceeds {TOL_GRAD}"
    return None


def _suite_supcon(rng) -> str | None:
    for trial in range(10):
        labels = np.concatenate(
            [np.full(2 + rng.integers(0, 3), c) for c in range(2 + trial % 3)])
        z = rng.normal(0, 1, (len(labels), 8))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        fast = float(supcon_loss(ad.Tensor(z), labels, tau=0.07).data)
        slow = reference.brute_force_supcon(z, labels, tau=0.07)
        if abs(fast - slow) > TOL_MATCH:
            return f"trial {trial}: |{fast:.8f} - {slow:.8f}| > {TOL_MATCH}"
    return None


def _suite_ensemble(rng) -> str | None:
    model = ModelState(input_dim=6, hidden_width=16, depth=2, proj_dim=8,
                       seed=11, n_rotations=4)
    model.register_task(1, [0, 1])
    model.register_task(2, [2, 3])
    for t in (1, 2):
        model.params[f"head.{t}.W"].data = rng.normal(
            0, 1, model.params[f"head.{t}.W"].data.shape).astype(np.float32)
        model.params[f"head.{t}.b"].data = rng.normal(
            0, 1, model.params[f"head.{t}.b"].data.shape).astype(np.float32)
    x = rng.normal(0, 2, (16, 6)).astype(np.float32)
    for t in (1, 2):
        fast = inference.ensemble_logits(model, x, t)
        slow = reference.ensemble_by_four_passes(
            lambda b: model.rotation_logits(b, t), rotate_batch, x, 2)
        gap = float(np.abs(fast - slow).max())
        if gap > TOL_MATCH:
            return f"task {t}: max deviation {gap:.2e} exceeds {TOL_MATCH}"
    return None


def _suite_auc(rng) -> str | None:
    for trial in range(20):
        n, m = rng.integers(2, 30, size=2)
        ins = rng.normal(0, 1, n)
        outs = rng.normal(0, 1, m)
        if trial % 2:  # force ties
            ins, outs = np.round(ins, 1), np.round(outs, 1)
        fast = auc(ins, outs)
        exact = float(reference.auc_exact(ins, outs))
        if fast != exact:
            return f"trial {trial}: {fast!r} != exact {exact!r}"
    return None


def _suite_protection(rng) -> str | None:
    tasks = make_synthetic_tasks(n_tasks=2, classes_per_task=2, dim=4,
                                 samples_per_class=40, seed=13)
    model = ModelState(input_dim=4, hidden_width=16, depth=2, proj_dim=8,
                       seed=13, n_rotations=4, s_max=700.0)
    cfg = AugmentConfig(noise_sigma=0.1)

    def _fit(task):
        model.register_task(task.task_id, task.classes)
        train_task_representation(model, task, epochs=3, batch_size=32, tau=0.07,
                                  lam=0.25, seed=13, augment_cfg=cfg,
                                  base_lr=0.05, peak_lr=0.3, warmup_epochs=1)
        train_task_classifier(model, task, epochs=2, batch_size=32, lr=0.1,
                              seed=13, augment_cfg=cfg)
        model.commit_task_mask(task.task_id)

    _fit(tasks[0])
    gates = trunk_gates(model.acc_mask, model.input_dim)
    frozen = {name: model.params[name].data.copy()
              for name in model.trunk_params()}
    _fit(tasks[1])
    for name, factors in gates.items():
        protected = factors == 0.0
        if not protected.any():
            continue
        before, after = frozen[name], model.params[name].data
        if not np.array_equal(before[protected], after[protected]):
            flipped = int(np.sum(before[protected] != after[protected]))
            return f"{name}: {flipped} fully-gated entries changed"
    return None


def run_selftest(seed: int = 0, inject_bug: str | None = None, log=print) -> bool:
    """Run every suite; log one line each; True iff all passed."""
    if inject_bug not in (None, "gradient"):
        raise ValueError(f"unknown bug injection {inject_bug!r}; only 'gradient'")
    suites = [
        ("gradient primitives vs central differences", _suite_gradients),
        ("contrastive loss vs brute-force double loop", _suite_supcon),
        ("rotation ensemble vs four explicit passes", _suite_ensemble),
        ("rank-based AUC vs exact pair counting", _suite_auc),
        ("mask gating protects finished tasks", _suite_protection),
    ]
    guard = _broken_sigmoid() if inject_bug == "gradient" else nullcontext()
    all_ok = True
    with guard:
        for name, fn in suites:
            rng = np.random.default_rng(np.random.SeedSequence((seed, 0, 99)))
            detail = fn(rng)
            all_ok &= detail is None
            if log is not None:
                log(f"{name:<46} {'PASS' if detail is None else 'FAIL: ' + detail}")
    return all_ok
