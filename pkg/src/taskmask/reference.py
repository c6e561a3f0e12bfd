"""Independent reference implementations used by the test suite and `selftest`.

Everything here is deliberately naive: double loops, four explicit forward
passes, exact rational arithmetic. The fast implementations elsewhere in the
package are required to agree with these. This module must not import from
the rest of the package, so a bug cannot hide in shared code.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np


def central_difference_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Gradient of a scalar function f at x by central finite differences.

    x must be float64; anything coarser makes the quotient meaningless.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(x))
        flat[i] = orig - step
        lo = float(f(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |a|, |n|), elementwise, as a single scalar."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def brute_force_supcon(z: np.ndarray, labels: np.ndarray, tau: float) -> float:
    """Supervised contrastive loss by an O(B^2) double loop.

    For each anchor x: positives are same-label samples excluding x, the
    denominator runs over the whole batch excluding x, and the batch term is
    averaged over all B anchors.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    B = z.shape[0]
    total = 0.0
    for i in range(B):
        positives = [p for p in range(B) if p != i and labels[p] == labels[i]]
        if not positives:
            raise ValueError(f"label {labels[i]} occurs only once in the batch")
        sims = np.array([z[i] @ z[k] / tau for k in range(B) if k != i])
        m = sims.max()
        log_denom = m + np.log(np.exp(sims - m).sum())
        inner = 0.0
        for p in positives:
            inner += (z[i] @ z[p] / tau) - log_denom
        total += -inner / len(positives)
    return total / B


def brute_force_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy via per-row naive softmax (stabilised by max-shift)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    total = 0.0
    for row, y in zip(logits, labels):
        m = row.max()
        p = np.exp(row - m) / np.exp(row - m).sum()
        total += -np.log(p[int(y)])
    return total / len(labels)


def ensemble_by_four_passes(logits_fn, rotate_fn, x: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-class ensemble scores via four explicit rotated forward passes.

    logits_fn maps a batch to (B, 4*n_classes) rotation-class logits with the
    encoding column = class*4 + rotation_index; rotate_fn(x, deg) rotates a
    batch. Returns (B, n_classes): entry j is the mean over rotations r of the
    logit for rotation class (j, r) evaluated on x rotated by 90*r degrees.
    """
    x = np.asarray(x)
    out = np.zeros((x.shape[0], n_classes), dtype=np.float64)
    for r in range(4):
        logits = np.asarray(logits_fn(rotate_fn(x, 90 * r)), dtype=np.float64)
        for j in range(n_classes):
            out[:, j] += logits[:, j * 4 + r]
    return out / 4.0


def auc_exact(in_scores, out_scores) -> Fraction:
    """AUC = P(in > out) + 0.5 * P(in = out) by exhaustive pair counting.

    Exact rational arithmetic; compare with float(auc_exact(...)).
    """
    ins = list(in_scores)
    outs = list(out_scores)
    if not ins or not outs:
        raise ValueError("both score lists must be non-empty")
    wins = 0
    ties = 0
    for a in ins:
        for b in outs:
            if a > b:
                wins += 1
            elif a == b:
                ties += 1
    return Fraction(2 * wins + ties, 2 * len(ins) * len(outs))


def linear_probe_accuracy(train_x, train_y, test_x, test_y) -> float:
    """Accuracy of a least-squares one-hot linear probe.

    Used as a separability oracle for the synthetic task generator: if blobs
    are far apart, this probe must score near-perfectly.
    """
    train_x = np.asarray(train_x, dtype=np.float64).reshape(len(train_x), -1)
    test_x = np.asarray(test_x, dtype=np.float64).reshape(len(test_x), -1)
    train_y = np.asarray(train_y)
    test_y = np.asarray(test_y)
    classes = np.unique(train_y)
    onehot = (train_y[:, None] == classes[None, :]).astype(np.float64)
    A = np.hstack([train_x, np.ones((len(train_x), 1))])
    W, *_ = np.linalg.lstsq(A, onehot, rcond=None)
    scores = np.hstack([test_x, np.ones((len(test_x), 1))]) @ W
    pred = classes[np.argmax(scores, axis=1)]
    return float(np.mean(pred == test_y))


def rotate_reference(x: np.ndarray, deg: int) -> np.ndarray:
    """90-degree counter-clockwise array rotation, fixed by the oracle
    [[1,2],[3,4]] -> 90 deg -> [[2,4],[1,3]]. Image batches rotate the last
    two axes."""
    if deg not in (0, 90, 180, 270):
        raise ValueError(f"unsupported rotation {deg}")
    return np.rot90(x, k=deg // 90, axes=(-2, -1))
