"""Sanity checks pinning the reference oracles to hand-computed values.

The oracles check the real implementations, so they get their own frozen
anchors here, computed by hand before anything else was built.
"""

import numpy as np
import pytest
from fractions import Fraction

from taskmask import reference as ref


def test_central_difference_on_quadratic():
    x = np.array([1.0, 2.0, -3.0])
    g = ref.central_difference_gradient(lambda v: float((v ** 2).sum()), x)
    assert np.allclose(g, 2 * x, atol=1e-8)


def test_relative_error_scales():
    assert ref.relative_error(np.array([1.0]), np.array([1.0])) == 0.0
    assert ref.relative_error(np.array([100.0]), np.array([101.0])) == pytest.approx(1 / 101)


def test_brute_supcon_two_identical_samples_is_zero():
    # one positive, denominator = that same positive: log(exp/exp) = 0
    z = np.array([[1.0, 0.0], [1.0, 0.0]])
    labels = np.array([3, 3])
    assert ref.brute_force_supcon(z, labels, tau=0.07) == pytest.approx(0.0, abs=1e-12)


def test_brute_supcon_rejects_singleton_label():
    z = np.eye(3)
    with pytest.raises(ValueError):
        ref.brute_force_supcon(z, np.array([0, 0, 1]), tau=0.5)


def test_brute_supcon_hand_value_four_samples():
    # two classes on axes; tau=1 keeps the arithmetic tractable by hand
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    labels = np.array([0, 0, 1, 1])
    # every anchor: positive sim 1, two negatives sim 0, denominator e + 2
    expected = -(1.0 - np.log(np.e + 2.0))
    assert ref.brute_force_supcon(z, labels, tau=1.0) == pytest.approx(expected, abs=1e-12)


def test_brute_cross_entropy_uniform():
    logits = np.zeros((4, 3))
    labels = np.array([0, 1, 2, 0])
    assert ref.brute_force_cross_entropy(logits, labels) == pytest.approx(np.log(3.0))


def test_auc_exact_frozen():
    assert ref.auc_exact([0.9, 0.8], [0.7, 0.85]) == Fraction(3, 4)
    assert float(ref.auc_exact([2, 3], [0, 1])) == 1.0
    assert float(ref.auc_exact([1, 2], [1, 2])) == 0.5


def test_auc_exact_rejects_empty():
    with pytest.raises(ValueError):
        ref.auc_exact([], [1.0])


def test_four_pass_ensemble_mean():
    # single sample, 1 class; logits independent of input: columns are
    # rotation classes (0,r); per-rotation logits 1,2,3,6 -> mean 3
    table = np.array([[1.0, 2.0, 3.0, 6.0]])
    out = ref.ensemble_by_four_passes(
        lambda xb: np.tile(table, (len(xb), 1)),
        lambda xb, deg: xb,
        np.zeros((1, 2, 2)),
        n_classes=1,
    )
    assert out.shape == (1, 1)
    assert out[0, 0] == pytest.approx(3.0)


def test_rotate_reference_orientation():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ref.rotate_reference(x, 90), np.array([[2.0, 4.0], [1.0, 3.0]]))
    assert np.array_equal(ref.rotate_reference(x, 0), x)
    assert np.array_equal(ref.rotate_reference(ref.rotate_reference(x, 90), 270), x)


def test_linear_probe_separable_blobs():
    rng = np.random.default_rng(0)
    c0 = rng.normal([0, 0], 1.0, size=(200, 2))
    c1 = rng.normal([8, 8], 1.0, size=(200, 2))
    X = np.vstack([c0, c1])
    y = np.array([0] * 200 + [1] * 200)
    acc = ref.linear_probe_accuracy(X, y, X, y)
    assert acc >= 0.99
