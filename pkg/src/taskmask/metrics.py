"""Sequence-level evaluation: the task-by-checkpoint accuracy matrix,
forgetting, incremental averages, separability, and detection rate."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class AccuracyMatrix:
    """Lower-triangular record: entry [j, k] is task j's accuracy measured
    right after task k finished training (both 0-indexed; j <= k)."""

    def __init__(self, n_tasks: int):
        self.values = np.full((n_tasks, n_tasks), np.nan)

    def record(self, task_index: int, after_index: int, accuracy: float):
        if task_index > after_index:
            raise ValueError(
                f"task {task_index} cannot be measured before it is trained (after {after_index})")
        self.values[task_index, after_index] = float(accuracy)

    def initial(self, task_index: int) -> float:
        return float(self.values[task_index, task_index])

    def column(self, after_index: int) -> np.ndarray:
        return self.values[:after_index + 1, after_index]


def average_accuracy(matrix: AccuracyMatrix | np.ndarray, after_index: int) -> float:
    """Mean accuracy over tasks 0..after_index at that checkpoint."""
    values = matrix.values if isinstance(matrix, AccuracyMatrix) else np.asarray(matrix)
    col = values[:after_index + 1, after_index]
    if np.isnan(col).any():
        raise ValueError(f"accuracy matrix incomplete at checkpoint {after_index}")
    return float(col.mean())


def forgetting_rate(initial, final) -> float:
    """Mean drop from each earlier task's just-trained accuracy to its
    current accuracy: (1/(t-1)) * sum_j (A_j_init - A_j_now) over the t-1
    earlier tasks."""
    initial = np.asarray(initial, dtype=np.float64)
    final = np.asarray(final, dtype=np.float64)
    if initial.shape != final.shape or initial.ndim != 1 or initial.size == 0:
        raise ValueError("need matching non-empty accuracy vectors for earlier tasks")
    return float(np.mean(initial - final))


def forgetting_from_matrix(matrix: AccuracyMatrix | np.ndarray, t: int) -> float:
    """Forgetting after task t (1-indexed count of trained tasks): compares
    each earlier task's diagonal entry to its entry in column t-1."""
    values = matrix.values if isinstance(matrix, AccuracyMatrix) else np.asarray(matrix)
    if t < 2:
        raise ValueError("forgetting needs at least two trained tasks")
    initial = np.diagonal(values)[:t - 1]
    final = values[:t - 1, t - 1]
    if np.isnan(initial).any() or np.isnan(final).any():
        raise ValueError(f"accuracy matrix incomplete for forgetting after task {t}")
    return forgetting_rate(initial, final)


def average_incremental_accuracy(matrix: AccuracyMatrix | np.ndarray, n_tasks: int) -> float:
    """Mean of the per-checkpoint average accuracies over the whole run."""
    return float(np.mean([average_accuracy(matrix, k) for k in range(n_tasks)]))


def auc(in_scores, out_scores) -> float:
    """Probability a random in-distribution score outranks a random
    out-of-distribution one, ties counting half. Rank-based: the rank sum and
    the final division are the only float operations, and both are exact for
    half-integer ranks, so the result equals the pair-counting definition.
    """
    in_scores = np.asarray(in_scores, dtype=np.float64).ravel()
    out_scores = np.asarray(out_scores, dtype=np.float64).ravel()
    n, m = in_scores.size, out_scores.size
    if n == 0 or m == 0:
        raise ValueError("both score sets must be non-empty")
    ranks = rankdata(np.concatenate([in_scores, out_scores]), method="average")
    r_in = ranks[:n].sum()
    return (r_in - n * (n + 1) / 2.0) / (n * m)


def task_detection_rate(detected_tasks, true_tasks) -> float:
    detected_tasks = np.asarray(detected_tasks)
    true_tasks = np.asarray(true_tasks)
    if detected_tasks.shape != true_tasks.shape:
        raise ValueError("detected and true task arrays must align")
    return float(np.mean(detected_tasks == true_tasks))
