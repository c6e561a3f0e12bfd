"""Per-task affine output correction, fit on the replayed memory buffer.

Each task k gets a scalar pair (sigma_k, mu_k) applied to its ensembled
output block; the pairs are trained jointly by cross-entropy over the
concatenated softmax so the task blocks become mutually comparable. Only
these 2T scalars are learned; the network itself is untouched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import MemoryBuffer
from .optim import SGD

# keeps per-step motion of rho and mu at most lr * bound = 1
_GRAD_BOUND = 100.0


@dataclass
class CalibrationParams:
    tasks: list[int]
    sigma: np.ndarray = field(default_factory=lambda: np.empty(0))
    mu: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if self.sigma.shape != (len(self.tasks),) or self.mu.shape != (len(self.tasks),):
            raise ValueError("one (sigma, mu) pair per task is required")
        if np.any(self.sigma <= 0):
            raise ValueError("scales must be positive; a negative scale would "
                             "invert within-task rankings")

    @classmethod
    def identity(cls, tasks: list[int]) -> "CalibrationParams":
        n = len(tasks)
        return cls(tasks=list(tasks), sigma=np.ones(n), mu=np.zeros(n))

    def _index(self, task_id: int) -> int:
        try:
            return self.tasks.index(task_id)
        except ValueError:
            raise KeyError(f"no calibration for task {task_id}; have {self.tasks}") from None

    def scale(self, task_id: int) -> float:
        return float(self.sigma[self._index(task_id)])

    def shift(self, task_id: int) -> float:
        return float(self.mu[self._index(task_id)])

    def as_dict(self) -> dict:
        return {"tasks": list(self.tasks),
                "sigma": self.sigma.tolist(),
                "mu": self.mu.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationParams":
        return cls(tasks=list(d["tasks"]), sigma=np.array(d["sigma"]), mu=np.array(d["mu"]))


def apply_calibration(blocks: list[np.ndarray], calib: CalibrationParams) -> np.ndarray:
    """Affine-correct each task's logit block and concatenate, task order."""
    if len(blocks) != len(calib.tasks):
        raise ValueError(f"{len(blocks)} blocks for {len(calib.tasks)} calibrated tasks")
    return np.hstack([calib.sigma[i] * np.atleast_2d(b) + calib.mu[i]
                      for i, b in enumerate(blocks)])


def fit_calibration(model, memory: MemoryBuffer, *, iterations: int = 160,
                    lr: float = 0.01, batch_size: int = 32, seed: int = 0,
                    log=None) -> CalibrationParams:
    """Fit (sigma_k, mu_k) for every trained task by minibatch gradient
    descent (no momentum) on the memory buffer.

    Scales are parameterized as sigma_k = exp(rho_k), so they stay positive
    and within-task rankings are never inverted. The network is fixed, so
    every memory sample's concatenated output is precomputed once; iterations
    only move the 2T scalars. iterations=0 returns the identity correction.
    """
    from .inference import concat_outputs  # deferred: inference imports this module

    tasks = model.tasks
    if not tasks:
        raise ValueError("no tasks to calibrate")
    if iterations == 0:
        return CalibrationParams.identity(tasks)
    if len(memory) == 0:
        raise ValueError("cannot fit calibration from an empty memory buffer")

    stored = {(t, g) for t, g, _, _ in memory.items()}
    for t in tasks:
        for g in model.task_classes[t]:
            if (t, g) not in stored:
                warnings.warn(f"memory holds no samples of class {g} (task {t}); "
                              "its column is fit only through the shared softmax",
                              RuntimeWarning, stacklevel=2)

    xs, cols = [], []
    for task_id, _, local, samples in memory.items():
        xs.append(np.asarray(samples))
        cols.append(np.full(len(samples), model.class_offset(task_id) + local, dtype=np.int64))
    X = np.concatenate(xs)
    y = np.concatenate(cols)
    F = concat_outputs(model, X)

    total = model.total_classes()
    E = np.zeros((len(tasks), total))
    for i, t in enumerate(tasks):
        off = model.class_offset(t)
        E[i, off:off + len(model.task_classes[t])] = 1.0

    rho = ad.Tensor(np.zeros((1, len(tasks))), requires_grad=True)
    mu = ad.Tensor(np.zeros((1, len(tasks))), requires_grad=True)
    opt = SGD({"rho": rho, "mu": mu}, momentum=0.0)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0, 4)))

    for it in range(iterations):
        pick = rng.choice(len(X), size=min(batch_size, len(X)), replace=False)
        with ad.GradTape() as tape:
            col_scale = ad.matmul(ad.exp(rho), E)
            col_shift = ad.matmul(mu, E)
            corrected = ad.scale_shift(ad.Tensor(F[pick]), col_scale, col_shift)
            loss = ad.softmax_cross_entropy(corrected, y[pick])
        tape.backward(loss)
        # raw gradients scale with the logits; on extreme outputs one step
        # would overflow exp(rho), so bound the per-step parameter motion
        for p in (rho, mu):
            np.clip(p.grad, -_GRAD_BOUND, _GRAD_BOUND, out=p.grad)
        opt.step(lr)
        if log is not None and (it + 1) % 40 == 0:
            log(f"calibration iteration {it + 1}/{iterations} loss {float(loss.data):.4f}")

    return CalibrationParams(tasks=list(tasks), sigma=np.exp(rho.data.ravel()),
                             mu=mu.data.ravel().copy())
