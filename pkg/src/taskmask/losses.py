"""Supervised contrastive loss over rotation classes."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def supcon_loss(z: ad.Tensor, labels: np.ndarray, tau: float = 0.07) -> ad.Tensor:
    """Mean over anchors x of -1/|P(x)| * sum_{p in P(x)} log softmax term,
    where P(x) holds same-label samples excluding x and the softmax
    denominator runs over the batch excluding x.

    Matrix form: one (B,B) similarity matrix, diagonal excluded from the
    denominator via a -inf-like additive mask, positives weighted 1/|P(x)|.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    labels = np.asarray(labels)
    B = z.data.shape[0]
    if labels.shape != (B,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {B}")
    same = labels[:, None] == labels[None, :]
    positives = same & ~np.eye(B, dtype=bool)
    counts = positives.sum(axis=1)
    if np.any(counts == 0):
        bad = labels[counts == 0][0]
        raise ValueError(f"label {bad} occurs only once in the batch; no positives")

    dtype = z.data.dtype
    sims = ad.mul(ad.matmul(z, z, transpose_b=True), np.asarray(1.0 / tau, dtype=dtype))
    # push the self-similarity out of every denominator
    diag_mask = np.zeros((B, B), dtype=dtype)
    np.fill_diagonal(diag_mask, np.finfo(dtype).min / 4)
    log_denom = ad.logsumexp(ad.add(sims, diag_mask), axis=1, keepdims=True)
    log_prob = ad.sub(sims, log_denom)
    weights = (positives / counts[:, None]).astype(dtype)
    return ad.mul(ad.tsum(ad.mul(log_prob, weights)), np.asarray(-1.0 / B, dtype=dtype))
