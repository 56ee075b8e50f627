"""Synthetic datasets for desk-scale training.

Segmentation: noisy images with rectangles (class 1) and disks (class 2) on
background (class 0).  Restoration: the same scenes in two unpaired domains,
where domain Y applies a fixed per-class color remap to domain X.
"""

from __future__ import annotations

import numpy as np

BACKGROUND, RECTANGLE, DISK = 0, 1, 2
NUM_SHAPE_CLASSES = 3

_CLASS_TINT = np.array([[40.0, 40.0, 40.0], [200.0, 70.0, 60.0], [60.0, 90.0, 200.0]])
# domain Y colors for the GAN task
_REMAP_TINT = np.array([[220.0, 220.0, 120.0], [30.0, 160.0, 60.0], [150.0, 40.0, 170.0]])


def shapes_labels(rng: np.random.Generator, h: int, w: int, max_shapes: int = 3) -> np.ndarray:
    labels = np.zeros((h, w), dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    scale = min(h, w) / 64.0
    for _ in range(int(rng.integers(1, max_shapes + 1))):
        if rng.random() < 0.5:
            rh = int(rng.integers(int(12 * scale), int(30 * scale) + 1))
            rw = int(rng.integers(int(12 * scale), int(30 * scale) + 1))
            y0 = int(rng.integers(0, h - rh + 1))
            x0 = int(rng.integers(0, w - rw + 1))
            labels[y0 : y0 + rh, x0 : x0 + rw] = RECTANGLE
        else:
            r = rng.uniform(7 * scale, 15 * scale)
            cy = rng.uniform(r, h - r)
            cx = rng.uniform(r, w - r)
            labels[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = DISK
    return labels


def render(rng: np.random.Generator, labels: np.ndarray, tint: np.ndarray = _CLASS_TINT,
           jitter: float = 35.0, noise: float = 12.0) -> np.ndarray:
    """``[3, H, W]`` float32 image in [0, 255]; each class gets a jittered tint plus pixel noise."""
    colors = tint + rng.uniform(-jitter, jitter, size=tint.shape)
    img = colors[labels].transpose(2, 0, 1)
    img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0, 255).astype(np.float32)


def make_segmentation_dataset(n: int, size: int = 64, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Images ``[n, 3, size, size]`` in [0, 255] and labels ``[n, size, size]``."""
    rng = np.random.default_rng(seed)
    images = np.empty((n, 3, size, size), dtype=np.float32)
    labels = np.empty((n, size, size), dtype=np.uint8)
    for i in range(n):
        labels[i] = shapes_labels(rng, size, size)
        images[i] = render(rng, labels[i])
    return images, labels


def make_domain_pair(n: int, size: int = 16, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Unpaired domains X and Y (Y = fixed class-color remap), pixels in [0, 255].

    Scenes are drawn independently for each domain, so sample ``i`` of X and
    of Y are unrelated.
    """
    rng = np.random.default_rng(seed)
    xs = np.empty((n, 3, size, size), dtype=np.float32)
    ys = np.empty((n, 3, size, size), dtype=np.float32)
    for i in range(n):
        xs[i] = render(rng, shapes_labels(rng, size, size, 2), _CLASS_TINT, jitter=0.0, noise=4.0)
        ys[i] = render(rng, shapes_labels(rng, size, size, 2), _REMAP_TINT, jitter=0.0, noise=4.0)
    return xs, ys


def to_unit_range(images: np.ndarray) -> np.ndarray:
    """[0, 255] -> [-1, 1]."""
    return (images / 127.5 - 1.0).astype(np.float32)


def from_unit_range(images: np.ndarray) -> np.ndarray:
    return ((np.asarray(images) + 1.0) * 127.5).astype(np.float32)
