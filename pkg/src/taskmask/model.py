"""Shared masked trunk with per-task attention embeddings, projection heads,
and rotation-class classifier heads."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .masking import accumulate_mask, attention


class ModelState:
    """All learnable state for the task sequence.

    The trunk (fully connected, ReLU, unit-masked) is shared; each task owns
    attention embeddings (one vector per trunk layer), a two-layer projection
    head used only during contrastive training, and a linear classifier over
    its rotation classes. `acc_mask` holds the element-wise maximum of all
    earlier tasks' saturated attentions and drives gradient gating.
    """

    def __init__(self, input_dim: int, hidden_width: int, depth: int, proj_dim: int,
                 seed: int, n_rotations: int = 4, s_max: float = 700.0):
        if depth < 1:
            raise ValueError("trunk needs at least one layer")
        self.input_dim = input_dim
        self.hidden_width = hidden_width
        self.depth = depth
        self.proj_dim = proj_dim
        self.n_rotations = n_rotations
        self.seed = seed
        self.s_max = s_max
        self.params: dict[str, ad.Tensor] = {}
        self.task_classes: dict[int, list[int]] = {}
        self.acc_mask: list[np.ndarray] = [np.zeros(hidden_width, dtype=np.float32)
                                           for _ in range(depth)]
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0, 90)))
        fan_in = input_dim
        for l in range(depth):
            self.params[f"trunk.{l}.W"] = _he(rng, fan_in, hidden_width)
            self.params[f"trunk.{l}.b"] = ad.Tensor(np.zeros(hidden_width, dtype=np.float32),
                                                    requires_grad=True)
            fan_in = hidden_width

    # --- task lifecycle -------------------------------------------------

    def register_task(self, task_id: int, classes: list[int]):
        if task_id in self.task_classes:
            raise ValueError(f"task {task_id} already registered")
        if self.task_classes and task_id != max(self.task_classes) + 1:
            raise ValueError(f"tasks must be registered in order; got {task_id}")
        self.task_classes[task_id] = list(classes)
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, task_id, 91)))
        for l in range(self.depth):
            self.params[f"emb.{task_id}.{l}"] = ad.Tensor(
                rng.standard_normal(self.hidden_width).astype(np.float32), requires_grad=True)
        self.params[f"proj.{task_id}.W1"] = _he(rng, self.hidden_width, self.hidden_width)
        self.params[f"proj.{task_id}.b1"] = ad.Tensor(
            np.zeros(self.hidden_width, dtype=np.float32), requires_grad=True)
        self.params[f"proj.{task_id}.W2"] = _he(rng, self.hidden_width, self.proj_dim)
        self.params[f"proj.{task_id}.b2"] = ad.Tensor(
            np.zeros(self.proj_dim, dtype=np.float32), requires_grad=True)
        head_dim = len(classes) * self.n_rotations
        self.params[f"head.{task_id}.W"] = ad.Tensor(
            np.zeros((self.hidden_width, head_dim), dtype=np.float32), requires_grad=True)
        self.params[f"head.{task_id}.b"] = ad.Tensor(
            np.zeros(head_dim, dtype=np.float32), requires_grad=True)

    @property
    def tasks(self) -> list[int]:
        return sorted(self.task_classes)

    def _require_task(self, task_id: int):
        if task_id not in self.task_classes:
            raise KeyError(f"unknown task {task_id}; trained tasks: {self.tasks}")

    # --- forward passes -------------------------------------------------

    def masked_forward(self, x, task_id: int, s: float, return_attn: bool = False):
        """Features h(x, t): every trunk layer is ReLU then elementwise
        attention sigmoid(s * e_l); heads are unmasked. With return_attn the
        per-layer attention tensors come back too, still attached to the
        graph, for the sparsity regularizer."""
        self._require_task(task_id)
        x = np.asarray(x)
        flat_dim = int(np.prod(x.shape[1:], dtype=np.int64)) if x.ndim > 1 else 1
        h = ad.Tensor(x.reshape(len(x), flat_dim).astype(np.float32, copy=False))
        if h.shape[1] != self.input_dim:
            raise ValueError(f"input dim {h.shape[1]} does not match model {self.input_dim}")
        attns = []
        for l in range(self.depth):
            h = ad.relu(ad.add(ad.matmul(h, self.params[f"trunk.{l}.W"]),
                               self.params[f"trunk.{l}.b"]))
            a = ad.sigmoid(ad.mul(self.params[f"emb.{task_id}.{l}"], float(s)))
            attns.append(a)
            h = ad.mul(h, a)
        if return_attn:
            return h, attns
        return h

    def project(self, features: ad.Tensor, task_id: int) -> ad.Tensor:
        """Unit-norm contrastive representation z = g_t(h)/|g_t(h)|."""
        self._require_task(task_id)
        hidden = ad.relu(ad.add(ad.matmul(features, self.params[f"proj.{task_id}.W1"]),
                                self.params[f"proj.{task_id}.b1"]))
        z = ad.add(ad.matmul(hidden, self.params[f"proj.{task_id}.W2"]),
                   self.params[f"proj.{task_id}.b2"])
        return ad.l2_normalize(z, axis=-1)

    def rotation_logits(self, x, task_id: int, s: float | None = None) -> np.ndarray:
        """Rotation-class logits f_t(h(x,t)) at the saturation temperature."""
        s = self.s_max if s is None else s
        feats = self.masked_forward(x, task_id, s)
        logits = ad.add(ad.matmul(feats, self.params[f"head.{task_id}.W"]),
                        self.params[f"head.{task_id}.b"])
        return logits.data

    # --- masks ----------------------------------------------------------

    def attentions(self, task_id: int, s: float) -> list[np.ndarray]:
        self._require_task(task_id)
        return [attention(self.params[f"emb.{task_id}.{l}"].data, s) for l in range(self.depth)]

    def commit_task_mask(self, task_id: int):
        """Fold the task's saturated attention into the accumulated mask.
        Call once, after the task's training finishes."""
        self.acc_mask = accumulate_mask(self.acc_mask, self.attentions(task_id, self.s_max))

    def embedding_tensors(self, task_id: int) -> list[ad.Tensor]:
        return [self.params[f"emb.{task_id}.{l}"] for l in range(self.depth)]

    def trunk_params(self) -> dict[str, ad.Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("trunk.")}

    def task_params(self, task_id: int, groups=("emb", "proj", "head")) -> dict[str, ad.Tensor]:
        prefixes = tuple(f"{g}.{task_id}." for g in groups)
        return {k: v for k, v in self.params.items() if k.startswith(prefixes)}

    def head_dim(self, task_id: int) -> int:
        return len(self.task_classes[task_id]) * self.n_rotations

    def class_offset(self, task_id: int) -> int:
        """Column offset of this task's block in the concatenated output."""
        return sum(len(self.task_classes[t]) for t in self.tasks if t < task_id)

    def total_classes(self) -> int:
        return sum(len(c) for c in self.task_classes.values())


def _he(rng: np.random.Generator, fan_in: int, fan_out: int) -> ad.Tensor:
    w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
    return ad.Tensor(w.astype(np.float32), requires_grad=True)
