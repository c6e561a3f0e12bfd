"""Contrastive loss against the brute-force oracle and its symmetries."""

import numpy as np
import pytest

from taskmask import autodiff as ad
from taskmask import reference as ref
from taskmask.losses import supcon_loss


def _random_unit_batch(rng, n, d, n_classes):
    z = rng.normal(0, 1, size=(n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    # two slots per class guarantee no singleton labels
    labels = np.repeat(np.arange(n_classes), 2)
    extra = rng.integers(0, n_classes, size=n - len(labels))
    return z, np.concatenate([labels, extra])


def test_matches_brute_force_on_random_batches():
    rng = np.random.default_rng(11)
    for _ in range(30):
        n = int(rng.integers(4, 33))
        n_classes = int(rng.integers(1, max(2, n // 2)))
        z, labels = _random_unit_batch(rng, n, 8, n_classes)
        fast = float(supcon_loss(ad.Tensor(z), labels, tau=0.07).data)
        slow = ref.brute_force_supcon(z, labels, tau=0.07)
        assert abs(fast - slow) <= 1e-6


def test_degenerate_pair_is_zero():
    z = np.array([[0.6, 0.8], [0.6, 0.8]])
    loss = supcon_loss(ad.Tensor(z), np.array([0, 0]), tau=0.07)
    assert float(loss.data) == pytest.approx(0.0, abs=1e-9)


def test_permutation_invariance():
    rng = np.random.default_rng(5)
    z, labels = _random_unit_batch(rng, 16, 6, 4)
    base = float(supcon_loss(ad.Tensor(z), labels, tau=0.07).data)
    perm = rng.permutation(16)
    permuted = float(supcon_loss(ad.Tensor(z[perm]), labels[perm], tau=0.07).data)
    assert permuted == pytest.approx(base, abs=1e-9)


def test_orthogonal_invariance():
    rng = np.random.default_rng(6)
    z, labels = _random_unit_batch(rng, 12, 6, 3)
    Q, _ = np.linalg.qr(rng.normal(0, 1, size=(6, 6)))
    base = float(supcon_loss(ad.Tensor(z), labels, tau=0.07).data)
    rotated = float(supcon_loss(ad.Tensor(z @ Q), labels, tau=0.07).data)
    assert rotated == pytest.approx(base, abs=1e-5)


def test_singleton_label_rejected():
    z = np.eye(3)
    with pytest.raises(ValueError, match="occurs only once"):
        supcon_loss(ad.Tensor(z), np.array([0, 0, 1]), tau=0.07)


def test_nonpositive_temperature_rejected():
    z = np.eye(2)
    with pytest.raises(ValueError):
        supcon_loss(ad.Tensor(z), np.array([0, 0]), tau=0.0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    z, labels = _random_unit_batch(rng, 8, 4, 2)
    t = ad.Tensor(z.copy(), requires_grad=True)
    with ad.GradTape() as tape:
        loss = supcon_loss(t, labels, tau=0.5)
    tape.backward(loss)
    numeric = ref.central_difference_gradient(
        lambda x: float(supcon_loss(ad.Tensor(x), labels, tau=0.5).data), z)
    assert ref.relative_error(t.grad, numeric) <= 1e-4


def test_loss_backward_through_normalization():
    # full stage-1 shape: raw projections -> unit norm -> loss
    rng = np.random.default_rng(8)
    raw = rng.normal(0, 1, size=(8, 5))
    labels = np.repeat([0, 1, 2, 3], 2)
    t = ad.Tensor(raw.copy(), requires_grad=True)
    with ad.GradTape() as tape:
        loss = supcon_loss(ad.l2_normalize(t), labels, tau=0.2)
    tape.backward(loss)
    numeric = ref.central_difference_gradient(
        lambda x: float(supcon_loss(ad.l2_normalize(ad.Tensor(x)), labels, tau=0.2).data), raw)
    assert ref.relative_error(t.grad, numeric) <= 1e-4
