"""Training loop for the segmentation network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff.optim import Adam
from ..autodiff.tensor import Tensor, no_grad
from ..metrics import confusion_matrix, scores_from_confusion
from .losses import seg_total_loss
from .net import SegNet, argmax_labels


@dataclass
class SegTrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 5e-4
    step_size: int = 100  # schedule period, in epochs
    gamma: float = 0.5
    shuffle: bool = True
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0


def train_seg_step(model: SegNet, optimizer: Adam, images: np.ndarray, labels: np.ndarray,
                   loss_weights=(1.0, 1.0, 1.0)) -> float:
    """One forward/backward/Adam update on a batch; returns the pre-update loss.

    ``images`` are network-normalized ``[N, 3, H, W]``, ``labels`` ``[N, H, W]``.
    """
    if images.shape[0] != labels.shape[0] or images.shape[2:] != labels.shape[1:]:
        raise ValueError(f"batch mismatch: images {images.shape}, labels {labels.shape}")
    model.train()
    optimizer.zero_grad()
    logits = model(Tensor(images))
    loss = seg_total_loss(logits, labels, *loss_weights)
    loss.backward()
    optimizer.step()
    return float(loss.data)


def evaluate(model: SegNet, images: np.ndarray, labels: np.ndarray, batch_size: int = 16) -> dict:
    """mIoU/mPA over a whole set (one pooled confusion matrix)."""
    k = model.config.num_classes
    cm = np.zeros((k, k), dtype=np.int64)
    model.eval()
    with no_grad():
        for i in range(0, len(images), batch_size):
            logits = model(Tensor(images[i : i + batch_size]))
            cm += confusion_matrix(argmax_labels(logits.data), labels[i : i + batch_size], k)
    model.train()
    return scores_from_confusion(cm)


def validation_loss(model: SegNet, images: np.ndarray, labels: np.ndarray, loss_weights=(1.0, 1.0, 1.0),
                    batch_size: int = 16) -> float:
    model.eval()
    total, count = 0.0, 0
    with no_grad():
        for i in range(0, len(images), batch_size):
            logits = model(Tensor(images[i : i + batch_size]))
            n = logits.shape[0]
            total += float(seg_total_loss(logits, labels[i : i + batch_size], *loss_weights).data) * n
            count += n
    model.train()
    return total / max(count, 1)


def moving_average(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        return np.array([])
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[window:] - c[:-window]) / window


def train_segmentation(model: SegNet, images: np.ndarray, labels: np.ndarray, cfg: SegTrainConfig,
                       callback=None) -> list[float]:
    """Shuffled mini-batch training for ``cfg.steps`` updates; returns the per-step loss trace.

    The step schedule counts epochs (full passes over ``images``).
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), cfg.lr, step_size=cfg.step_size, gamma=cfg.gamma)
    n = len(images)
    bs = min(cfg.batch_size, n)
    per_epoch = max(1, n // bs)
    trace: list[float] = []
    order = rng.permutation(n)
    for step in range(cfg.steps):
        epoch, pos = divmod(step, per_epoch)
        if pos == 0:
            if cfg.shuffle:
                order = rng.permutation(n)
            else:
                order = np.arange(n)
            opt.set_epoch(epoch)
        idx = np.sort(order[pos * bs : (pos + 1) * bs])
        trace.append(train_seg_step(model, opt, images[idx], labels[idx], cfg.loss_weights))
        if callback is not None:
            callback(step, trace[-1])
    return trace
