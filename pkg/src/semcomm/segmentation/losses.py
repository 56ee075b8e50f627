"""Composite segmentation loss: cross-entropy, soft Dice and focal terms.

Every loss takes logits ``[N, M, H, W]`` (or ``[M, H, W]``) and integer
targets of matching spatial shape, and averages over all pixels.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import Tensor
from ..errors import ContractError

DICE_SMOOTH = 1e-6
FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
FOCAL_EPS = 1e-7


def one_hot(target: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """``[..., H, W]`` integer labels -> ``[..., M, H, W]`` indicator array."""
    target = np.asarray(target)
    if target.size and (target.min() < 0 or target.max() >= num_classes):
        raise ContractError(f"labels must lie in [0, {num_classes})")
    eye = np.eye(num_classes, dtype=dtype)
    return np.moveaxis(eye[target.astype(np.int64)], -1, -3)


def _labels(target) -> np.ndarray:
    return np.asarray(getattr(target, "labels", target))


def _true_class_log_prob(logits: Tensor, target) -> Tensor:
    mask = one_hot(_labels(target), logits.shape[-3], logits.dtype)
    if mask.shape != logits.shape:
        raise ContractError(f"target shape {mask.shape} does not match logits {logits.shape}")
    return (ops.log_softmax_channel(logits) * mask).sum(axis=-3)


def ce_loss(logits: Tensor, target) -> Tensor:
    """Mean over pixels of ``-log p(true class)``."""
    return -_true_class_log_prob(logits, target).mean()


def dice_loss(probs: Tensor, target_one_hot, smooth: float = DICE_SMOOTH) -> Tensor:
    """``1 - 2 sum(x*y) / (sum(x) + sum(y) + smooth)`` with sums over classes and pixels."""
    y = np.asarray(getattr(target_one_hot, "data", target_one_hot), dtype=probs.dtype)
    if y.shape != probs.shape:
        raise ContractError(f"target shape {y.shape} does not match probabilities {probs.shape}")
    inter = (probs * y).sum()
    total = probs.sum() + float(y.sum()) + smooth
    return 1.0 - inter * 2.0 / total


def focal_loss(logits: Tensor, target, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA,
               eps: float = FOCAL_EPS) -> Tensor:
    """Mean over pixels of ``-alpha (1 - p_t)^gamma log p_t``."""
    if gamma < 0:
        raise ContractError("gamma must be >= 0")
    if not 0 < alpha <= 1:
        raise ContractError("alpha must lie in (0, 1]")
    log_pt = _true_class_log_prob(logits, target)
    pt = log_pt.exp().clip(eps, 1.0)
    return ((1.0 - pt) ** gamma * pt.log() * (-alpha)).mean()


def focal_loss_from_probs(probs, target, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA,
                          eps: float = FOCAL_EPS) -> float:
    """Same quantity evaluated directly on probabilities (no graph)."""
    p = np.asarray(getattr(probs, "data", probs), dtype=np.float64)
    mask = one_hot(_labels(target), p.shape[-3], np.float64)
    pt = np.clip((p * mask).sum(axis=-3), eps, 1.0)
    return float(np.mean(-alpha * (1.0 - pt) ** gamma * np.log(pt)))


def seg_total_loss(logits: Tensor, target, w_ce: float = 1.0, w_dice: float = 1.0,
                   w_focal: float = 1.0, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> Tensor:
    if min(w_ce, w_dice, w_focal) < 0:
        raise ContractError("loss weights must be non-negative")
    labels = _labels(target)
    total = None
    if w_ce:
        total = ce_loss(logits, labels) * w_ce
    if w_dice:
        term = dice_loss(ops.softmax_channel(logits), one_hot(labels, logits.shape[-3], logits.dtype)) * w_dice
        total = term if total is None else total + term
    if w_focal:
        term = focal_loss(logits, labels, alpha, gamma) * w_focal
        total = term if total is None else total + term
    if total is None:
        total = (logits * 0.0).sum()
    return total
