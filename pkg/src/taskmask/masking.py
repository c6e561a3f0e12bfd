"""Per-task hard attention: pseudo-binary unit gates, mask accumulation,
gradient gating, the sparsity regularizer, and the in-epoch temperature ramp.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.special import expit

from . import autodiff as ad


def attention(e: np.ndarray, s: float) -> np.ndarray:
    """a = sigmoid(s * e). Large s turns the sigmoid into a pseudo step
    function; s=1 is the standard sigmoid."""
    if s <= 0:
        raise ValueError(f"attention temperature must be positive, got {s}")
    return expit(s * np.asarray(e))


def accumulate_mask(accumulated: list[np.ndarray], current: list[np.ndarray]) -> list[np.ndarray]:
    """Element-wise maximum per layer; the pre-first-task accumulator is all
    zeros, so the first accumulation returns the first task's mask."""
    if len(accumulated) != len(current):
        raise ValueError(f"layer count mismatch: {len(accumulated)} vs {len(current)}")
    return [np.maximum(a, c) for a, c in zip(accumulated, current)]


def weight_gate(acc_in: np.ndarray, acc_out: np.ndarray) -> np.ndarray:
    """Gate matrix for a weight W of shape (n_in, n_out):
    gate[i, j] = 1 - min(acc_out[j], acc_in[i]).

    A weight is fully protected (gate 0) only when both adjacent units belong
    to earlier tasks. The input layer has no mask and is treated as fully
    attended, so first-layer weights are gated by their output unit alone.
    """
    return 1.0 - np.minimum(acc_in[:, None], acc_out[None, :])


def bias_gate(acc_out: np.ndarray) -> np.ndarray:
    return 1.0 - acc_out


def trunk_gates(accumulated: list[np.ndarray], input_dim: int, prefix: str = "trunk") -> dict[str, np.ndarray]:
    """Gates for every trunk parameter, keyed by optimizer parameter name."""
    gates = {}
    acc_prev = np.ones(input_dim, dtype=accumulated[0].dtype if accumulated else np.float32)
    for l, acc in enumerate(accumulated):
        gates[f"{prefix}.{l}.W"] = weight_gate(acc_prev, acc)
        gates[f"{prefix}.{l}.b"] = bias_gate(acc)
        acc_prev = acc
    return gates


def mask_regularizer(attentions: list[ad.Tensor], accumulated: list[np.ndarray],
                     lam: float) -> ad.Tensor:
    """Sparsity pressure on the current task's attention over still-free units:

        L_r = lam * sum_a a*(1-acc) / sum (1-acc)

    Differentiable in the attention tensors. A zero denominator means every
    unit is claimed by earlier tasks; returns 0 with a capacity warning.
    """
    denom = float(sum(np.sum(1.0 - acc) for acc in accumulated))
    if denom == 0.0:
        warnings.warn("network at maximum capacity: all units claimed by earlier tasks",
                      RuntimeWarning, stacklevel=2)
        return ad.Tensor(np.zeros((), dtype=attentions[0].data.dtype))
    total = None
    for a, acc in zip(attentions, accumulated):
        term = ad.tsum(ad.mul(a, (1.0 - acc).astype(a.data.dtype)))
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, lam / denom)


def anneal_s(batch_index: int, batches_per_epoch: int, s_max: float) -> float:
    """Linear in-epoch ramp from 1/s_max to s_max; inference and mask
    accumulation always use s_max."""
    if s_max < 1:
        raise ValueError(f"s_max must be >= 1, got {s_max}")
    if batches_per_epoch < 2:
        return s_max
    frac = batch_index / (batches_per_epoch - 1)
    return 1.0 / s_max + (s_max - 1.0 / s_max) * frac


def embedding_compensation(e: np.ndarray, s: float, s_max: float) -> np.ndarray:
    """Rescale factor for embedding gradients under a saturating temperature.

    The gradient through sigmoid(s*e) carries a factor s*sig'(s*e) that
    vanishes for large s; multiplying by
        [s_max * sig(e)(1-sig(e))] / [s * sig(c)(1-sig(c))], c = clip(s*e, +-50)
    restores a trainable magnitude while preserving sign.
    """
    # sig(x)(1-sig(x)) == 1/(2*(cosh(x)+1)); the cosh form stays nonzero at
    # c=+-50 where the direct product underflows, keeping the factor finite
    c = np.clip(s * e, -50.0, 50.0)
    num = s_max * (np.cosh(c) + 1.0)
    den = s * (np.cosh(e) + 1.0)
    return num / den


def capacity_report(accumulated: list[np.ndarray], threshold: float = 0.5) -> list[float]:
    """Fraction of units per layer claimed by earlier tasks (attention above
    threshold)."""
    return [float(np.mean(acc > threshold)) for acc in accumulated]
