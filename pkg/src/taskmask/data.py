"""IDX file parsing, task sequences, validation splits, and the calibration
memory buffer."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


@dataclass
class TaskDataset:
    """One task's data: global class list plus train/val/test splits with
    labels remapped to local indices 0..len(classes)-1."""

    task_id: int
    classes: list[int]
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray = field(default_factory=lambda: np.empty((0,)))
    test_y: np.ndarray = field(default_factory=lambda: np.empty((0,), dtype=np.int64))

    @property
    def n_classes(self) -> int:
        return len(self.classes)


class MemoryBuffer:
    """Class-balanced store of validation samples, used only to fit output
    calibration."""

    def __init__(self):
        self._store: dict[tuple[int, int], tuple[np.ndarray, int]] = {}

    def add(self, task_id: int, global_class: int, samples: np.ndarray, local_label: int):
        if (task_id, global_class) in self._store:
            raise ValueError(f"class {global_class} of task {task_id} already stored")
        self._store[(task_id, global_class)] = (np.array(samples), local_label)

    def __len__(self) -> int:
        return sum(len(s) for s, _ in self._store.values())

    def census(self) -> dict[tuple[int, int], int]:
        return {key: len(s) for key, (s, _) in self._store.items()}

    def items(self):
        return [(task_id, gcls, local, samples)
                for (task_id, gcls), (samples, local) in sorted(self._store.items())]

    def balanced(self) -> bool:
        counts = set(self.census().values())
        return len(counts) <= 1


def parse_idx_images(raw: bytes) -> np.ndarray:
    """Big-endian IDX image payload -> (n, rows, cols) float array in [0,1]."""
    if len(raw) < 16:
        raise ValueError(f"truncated IDX image header: {len(raw)} bytes at offset 0")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise ValueError(f"expected image magic {IMAGE_MAGIC}, got {magic} at offset 0")
    expected = count * rows * cols
    if len(raw) - 16 != expected:
        raise ValueError(
            f"IDX image payload holds {len(raw) - 16} bytes at offset 16, expected {expected}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return (pixels.reshape(count, rows, cols).astype(np.float32)) / 255.0


def parse_idx_labels(raw: bytes) -> np.ndarray:
    """Big-endian IDX label payload -> (n,) int64 array."""
    if len(raw) < 8:
        raise ValueError(f"truncated IDX label header: {len(raw)} bytes at offset 0")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise ValueError(f"expected label magic {LABEL_MAGIC}, got {magic} at offset 0")
    if len(raw) - 8 != count:
        raise ValueError(f"IDX label payload holds {len(raw) - 8} bytes at offset 8, expected {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def serialize_idx_images(images: np.ndarray) -> bytes:
    """Inverse of parse_idx_images; values in [0,1] quantised back to bytes."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise ValueError(f"expected (n, rows, cols) images, got shape {images.shape}")
    n, rows, cols = images.shape
    header = struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols)
    pixels = np.rint(images * 255.0).clip(0, 255).astype(np.uint8)
    return header + pixels.tobytes()


def serialize_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels)
    header = struct.pack(">II", LABEL_MAGIC, len(labels))
    return header + labels.astype(np.uint8).tobytes()


def read_idx_file(path: str | Path) -> bytes:
    """Read an IDX file, transparently decompressing a .gz suffix."""
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def load_mnist(directory: str | Path):
    """Load the four canonical IDX files (plain or gzipped) from a directory."""
    directory = Path(directory)
    arrays = {}
    for stem, parser in [("train-images-idx3-ubyte", parse_idx_images),
                         ("train-labels-idx1-ubyte", parse_idx_labels),
                         ("t10k-images-idx3-ubyte", parse_idx_images),
                         ("t10k-labels-idx1-ubyte", parse_idx_labels)]:
        plain, gz = directory / stem, directory / (stem + ".gz")
        if plain.exists():
            arrays[stem] = parser(read_idx_file(plain))
        elif gz.exists():
            arrays[stem] = parser(read_idx_file(gz))
        else:
            raise FileNotFoundError(f"missing {stem}[.gz] under {directory}")
    return (arrays["train-images-idx3-ubyte"], arrays["train-labels-idx1-ubyte"],
            arrays["t10k-images-idx3-ubyte"], arrays["t10k-labels-idx1-ubyte"])


def make_task_sequence(images: np.ndarray, labels: np.ndarray, classes_per_task: int,
                       seed, val_fraction: float = 0.1,
                       test_images: np.ndarray | None = None,
                       test_labels: np.ndarray | None = None) -> list[TaskDataset]:
    """Split classes into consecutive blocks of classes_per_task and carve a
    per-class validation split from the training data."""
    labels = np.asarray(labels)
    classes = sorted(int(c) for c in np.unique(labels))
    if len(classes) % classes_per_task != 0:
        raise ValueError(
            f"{len(classes)} classes not divisible by classes_per_task={classes_per_task}")
    if classes != list(range(len(classes))):
        missing = sorted(set(range(max(classes) + 1)) - set(classes))
        raise ValueError(f"class ids must be consecutive from 0; missing {missing}")

    tasks = []
    for t, start in enumerate(range(0, len(classes), classes_per_task), start=1):
        block = classes[start:start + classes_per_task]
        tr_x, tr_y, va_x, va_y = [], [], [], []
        for local, cls in enumerate(block):
            idx = np.flatnonzero(labels == cls)
            if idx.size == 0:
                raise ValueError(f"no training samples for class {cls}")
            rng = np.random.default_rng(np.random.SeedSequence((_seed_int(seed), t, local, 0)))
            perm = rng.permutation(idx)
            n_val = int(round(val_fraction * idx.size))
            va, tr = perm[:n_val], perm[n_val:]
            tr_x.append(images[tr]); tr_y.append(np.full(tr.size, local, dtype=np.int64))
            va_x.append(images[va]); va_y.append(np.full(va.size, local, dtype=np.int64))
        te_x = te_y = None
        if test_images is not None and test_labels is not None:
            test_labels = np.asarray(test_labels)
            keep = np.isin(test_labels, block)
            te_x = test_images[keep]
            te_y = np.searchsorted(block, test_labels[keep]).astype(np.int64)
        tasks.append(TaskDataset(
            task_id=t, classes=list(block),
            train_x=np.concatenate(tr_x), train_y=np.concatenate(tr_y),
            val_x=np.concatenate(va_x), val_y=np.concatenate(va_y),
            test_x=te_x if te_x is not None else np.empty((0,) + images.shape[1:], images.dtype),
            test_y=te_y if te_y is not None else np.empty((0,), dtype=np.int64)))
    return tasks


def update_memory(memory: MemoryBuffer, task: TaskDataset, per_class: int, seed) -> MemoryBuffer:
    """Add per_class uniformly sampled validation items for each of the task's
    classes; existing entries are untouched."""
    if per_class == 0:
        return memory
    for local, cls in enumerate(task.classes):
        pool = np.flatnonzero(task.val_y == local)
        if pool.size < per_class:
            raise ValueError(
                f"class {cls} has {pool.size} validation samples, need {per_class}")
        rng = np.random.default_rng(
            np.random.SeedSequence((_seed_int(seed), task.task_id, local, 3)))
        pick = rng.choice(pool, size=per_class, replace=False)
        memory.add(task.task_id, cls, task.val_x[pick], local)
    return memory


def make_synthetic_tasks(n_tasks: int, classes_per_task: int, dim: int,
                         samples_per_class: int, seed, val_fraction: float = 0.1,
                         test_per_class: int = 100) -> list[TaskDataset]:
    """Gaussian-blob tasks for fast property tests.

    Each task owns a narrow angular band on one shared circle in the first
    two coordinates (unit blob sigma, classes >= 6 sigma apart within a
    band); bands are spread evenly around the full circle. The shared radius
    keeps logit magnitudes comparable across tasks, a quarter turn moves any
    sample at least 45 degrees minus a band width away from its own task's
    blobs (rotation classes are genuinely out-of-distribution), and other
    tasks' bands sit near those rotated positions, which a trained head has
    learned to assign to rotation columns rather than class columns.
    Remaining coordinates carry small seeded noise.
    """
    if min(n_tasks, classes_per_task, dim, samples_per_class) <= 0:
        raise ValueError("all synthetic dataset counts must be positive")
    if dim < 2:
        raise ValueError("synthetic tasks need dim >= 2 for the rotation plane")
    n_classes = n_tasks * classes_per_task
    pitch = min(2 * np.pi / n_tasks, np.pi / 2)
    delta = min(np.deg2rad(12.0), 0.5 * pitch / max(1, classes_per_task - 1))
    radius = 6.0 / (2 * np.sin(delta / 2))
    centers = (np.arange(n_tasks) + 0.5) * 2 * np.pi / n_tasks
    angles = np.concatenate(
        [c + (np.arange(classes_per_task) - (classes_per_task - 1) / 2) * delta
         for c in centers])
    means = np.zeros((n_classes, dim), dtype=np.float64)
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)

    tasks = []
    for t in range(1, n_tasks + 1):
        block = list(range((t - 1) * classes_per_task, t * classes_per_task))
        n_val = int(round(val_fraction * samples_per_class))
        splits = {"train": samples_per_class - n_val, "val": n_val, "test": test_per_class}
        data = {}
        for si, (name, count) in enumerate(splits.items()):
            xs, ys = [], []
            for local, cls in enumerate(block):
                rng = np.random.default_rng(
                    np.random.SeedSequence((_seed_int(seed), t, local, 10 + si)))
                pts = rng.normal(0.0, 1.0, size=(count, dim)) + means[cls]
                pts[:, 2:] = means[cls][2:] + rng.normal(0.0, 0.1, size=(count, dim - 2))
                xs.append(pts.astype(np.float32))
                ys.append(np.full(count, local, dtype=np.int64))
            data[name] = (np.concatenate(xs), np.concatenate(ys))
        tasks.append(TaskDataset(
            task_id=t, classes=block,
            train_x=data["train"][0], train_y=data["train"][1],
            val_x=data["val"][0], val_y=data["val"][1],
            test_x=data["test"][0], test_y=data["test"][1]))
    return tasks


def _seed_int(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
