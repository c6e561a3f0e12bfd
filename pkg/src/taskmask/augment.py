"""View augmentation and the rotation-class expansion.

A batch of N labeled samples becomes the contrastive batch of size 8N: two
augmented views, each rotated by 0/90/180/270 degrees, with labels
local_class*4 + rotation_index. Output is view-major: eight blocks of N in
(view, rotation) order. Vector (non-image) data uses additive-noise views and
rotates its first two coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROTATION_DEGREES = (0, 90, 180, 270)


@dataclass
class AugmentConfig:
    hflip_p: float = 0.5
    jitter_p: float = 0.8
    pad: int = 4
    noise_sigma: float = 0.05
    rotations: bool = True
    center_crop: bool = False  # forces the crop offset to the identity position


@dataclass
class AugmentedBatch:
    samples: np.ndarray
    labels: np.ndarray
    view_ids: np.ndarray
    degrees: np.ndarray

    def __len__(self) -> int:
        return len(self.samples)


def rotate(x: np.ndarray, deg: int) -> np.ndarray:
    """Exact counter-clockwise image rotation of the last two axes;
    [[1,2],[3,4]] at 90 -> [[2,4],[1,3]]. No interpolation."""
    if deg not in ROTATION_DEGREES:
        raise ValueError(f"rotation must be one of {ROTATION_DEGREES}, got {deg}")
    x = np.asarray(x)
    if x.ndim < 2:
        raise ValueError(f"rotate expects at least a 2-D image, got shape {x.shape}")
    if deg in (90, 270) and x.shape[-2] != x.shape[-1]:
        raise ValueError(f"cannot rotate non-square image of shape {x.shape[-2:]} by {deg}")
    return np.rot90(x, k=deg // 90, axes=(-2, -1))


def rotate_vectors(x: np.ndarray, deg: int) -> np.ndarray:
    """Rotate the first two coordinates of feature vectors by deg degrees
    counter-clockwise: (a, b) -> (-b, a) per quarter turn."""
    if deg not in ROTATION_DEGREES:
        raise ValueError(f"rotation must be one of {ROTATION_DEGREES}, got {deg}")
    out = np.array(x)
    a = out[..., 0].copy()
    b = out[..., 1].copy()
    for _ in range(deg // 90):
        a, b = -b, a
    out[..., 0] = a
    out[..., 1] = b
    return out


def rotate_batch(x: np.ndarray, deg: int) -> np.ndarray:
    """Dispatch by layout: (B, H, W) image batches rotate as arrays, (B, D)
    vector batches rotate their first-two-coordinate plane."""
    x = np.asarray(x)
    if x.ndim == 3:
        return rotate(x, deg)
    if x.ndim == 2:
        return rotate_vectors(x, deg)
    raise ValueError(f"expected (B, H, W) or (B, D) batch, got shape {x.shape}")


def initial_views(x: np.ndarray, seed, cfg: AugmentConfig | None = None):
    """Two independently augmented views of one sample."""
    cfg = cfg or AugmentConfig()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    batch = np.asarray(x)[None]
    v1 = _augment_view(batch, rng, cfg)[0]
    v2 = _augment_view(batch, rng, cfg)[0]
    return v1, v2


def _augment_view(batch: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    if batch.ndim == 2:  # vector data: views differ by additive noise
        return (batch + rng.normal(0.0, cfg.noise_sigma, size=batch.shape)).astype(batch.dtype)
    if batch.ndim != 3:
        raise ValueError(f"expected (B, H, W) images or (B, D) vectors, got shape {batch.shape}")
    B, H, W = batch.shape
    out = batch.astype(np.float32, copy=True)

    flips = rng.random(B) < cfg.hflip_p
    out[flips] = out[flips, :, ::-1]

    jitter = rng.random(B) < cfg.jitter_p
    brightness = rng.uniform(0.6, 1.4, size=B).astype(np.float32)
    contrast = rng.uniform(0.6, 1.4, size=B).astype(np.float32)
    if jitter.any():
        sel = out[jitter]
        sel = np.clip(sel * brightness[jitter, None, None], 0.0, 1.0)
        means = sel.mean(axis=(1, 2), keepdims=True)
        sel = np.clip((sel - means) * contrast[jitter, None, None] + means, 0.0, 1.0)
        out[jitter] = sel

    if cfg.pad > 0:
        p = cfg.pad
        padded = np.pad(out, ((0, 0), (p, p), (p, p)))
        if cfg.center_crop:
            rows = np.full(B, p)
            cols = np.full(B, p)
        else:
            rows = rng.integers(0, 2 * p + 1, size=B)
            cols = rng.integers(0, 2 * p + 1, size=B)
        windows = np.lib.stride_tricks.sliding_window_view(padded, (H, W), axis=(1, 2))
        out = windows[np.arange(B), rows, cols].astype(np.float32)
    return out


def build_contrastive_batch(x: np.ndarray, y: np.ndarray, seed,
                            cfg: AugmentConfig | None = None) -> AugmentedBatch:
    """Expand N labeled samples into the contrastive batch.

    With rotations on: 8N samples, labels local_class*4 + rotation_index.
    With rotations off: 2N samples (the two views), labels unchanged.
    """
    cfg = cfg or AugmentConfig()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.asarray(x)
    y = np.asarray(y)
    if len(x) == 0:
        return AugmentedBatch(samples=x.copy(), labels=y.astype(np.int64),
                              view_ids=np.empty(0, dtype=np.int64),
                              degrees=np.empty(0, dtype=np.int64))
    n = len(x)
    degrees = ROTATION_DEGREES if cfg.rotations else (0,)
    samples, labels, views, degs = [], [], [], []
    for view in (0, 1):
        base = _augment_view(x, rng, cfg)
        for r, deg in enumerate(degrees):
            samples.append(rotate_batch(base, deg))
            labels.append(y * len(degrees) + r)
            views.append(np.full(n, view, dtype=np.int64))
            degs.append(np.full(n, deg, dtype=np.int64))
    return AugmentedBatch(samples=np.concatenate(samples),
                          labels=np.concatenate(labels).astype(np.int64),
                          view_ids=np.concatenate(views),
                          degrees=np.concatenate(degs))
