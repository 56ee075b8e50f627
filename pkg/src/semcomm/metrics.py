"""Image-quality, segmentation-quality, compression and latency metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _arr(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")


def mse(a, b) -> float:
    a, b = _arr(a), _arr(b)
    _same_shape(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(a, b, max_val: float = 255.0) -> float:
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(max_val * max_val / err))


def luma(image: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma of a ``[3, H, W]`` image; 2-D inputs pass through."""
    image = _arr(image)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[0] == 3:
        return 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]
    if image.ndim == 3 and image.shape[0] == 1:
        return image[0]
    raise ShapeError(f"cannot take luma of shape {image.shape}")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable correlation with ``g`` over both axes, 'valid' region only."""
    k = g.size
    h, w = img.shape
    rows = sum(g[i] * img[i : h - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[:, j : w - k + 1 + j] for j in range(k))


def ssim(a, b, max_val: float = 255.0) -> float:
    """Mean SSIM over every full 11x11 Gaussian window of the luma images."""
    ya, yb = luma(a), luma(b)
    _same_shape(ya, yb)
    if min(ya.shape) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs extents >= {SSIM_WINDOW}, got {ya.shape}")
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(ya, g), _filter_valid(yb, g)
    var_a = _filter_valid(ya * ya, g) - mu_a * mu_a
    var_b = _filter_valid(yb * yb, g) - mu_b * mu_b
    cov = _filter_valid(ya * yb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def confusion_matrix(pred, gt, num_classes: int) -> np.ndarray:
    p = np.asarray(getattr(pred, "labels", pred)).astype(np.int64).ravel()
    t = np.asarray(getattr(gt, "labels", gt)).astype(np.int64).ravel()
    if p.shape != t.shape:
        raise ShapeError("prediction and ground truth differ in size")
    if p.size and (p.max() >= num_classes or t.max() >= num_classes or p.min() < 0 or t.min() < 0):
        raise ContractError(f"labels must lie in [0, {num_classes})")
    return np.bincount(t * num_classes + p, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def scores_from_confusion(cm: np.ndarray) -> dict:
    """mIoU over classes present in gt or prediction; mPA over classes present in gt."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    gt_count = cm.sum(axis=1)
    pred_count = cm.sum(axis=0)
    union = gt_count + pred_count - tp
    present = union > 0
    in_gt = gt_count > 0
    iou = np.divide(tp, union, out=np.full_like(tp, np.nan), where=present)
    pa = np.divide(tp, gt_count, out=np.full_like(tp, np.nan), where=in_gt)
    return {
        "mIoU": float(iou[present].mean()) if present.any() else 1.0,
        "mPA": float(pa[in_gt].mean()) if in_gt.any() else 1.0,
        "per_class_iou": [None if np.isnan(v) else float(v) for v in iou],
    }


def miou_mpa(pred, gt, num_classes: int) -> dict:
    return scores_from_confusion(confusion_matrix(pred, gt, num_classes))


def compression_ratio(raw_bytes: float, payload_bytes: float) -> float:
    if raw_bytes <= 0 or payload_bytes <= 0:
        raise ContractError("sizes must be positive")
    return raw_bytes / payload_bytes


@dataclass
class LatencyModel:
    bitrate: float  # bits per second
    raw_bits: float
    payload_bits: float
    t_seg: float = 0.0
    t_restore: float = 0.0


def latency_report(model: LatencyModel) -> dict:
    """Raw-transmission delay vs segment + transmit payload + restore."""
    if model.bitrate <= 0:
        raise ContractError("bitrate must be positive")
    if model.raw_bits <= 0 or model.payload_bits <= 0 or model.t_seg < 0 or model.t_restore < 0:
        raise ContractError("latency model fields must be positive")
    t_raw = model.raw_bits / model.bitrate
    t_tx = model.payload_bits / model.bitrate
    t_sem = model.t_seg + t_tx + model.t_restore
    return {
        "T_raw": t_raw,
        "T_semantic": t_sem,
        "T_transmit_payload": t_tx,
        "t_seg": model.t_seg,
        "t_restore": model.t_restore,
        "reduction": 1.0 - t_sem / t_raw,
    }
