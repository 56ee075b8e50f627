"""Slow, independent reference implementations used as test oracles."""

import math

import numpy as np


def conv2d_loop(x, w, b=None, stride=1, pad=0, dilation=1):
    """Direct summation over taps for a single ``[C, H, W]`` input."""
    c, h, wd = x.shape
    f, _, kh, kw = w.shape
    oh = (h + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
    ow = (wd + 2 * pad - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((f, oh, ow))
    for o in range(f):
        for i in range(oh):
            for j in range(ow):
                s = 0.0 if b is None else float(b[o])
                for ci in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            r = i * stride - pad + u * dilation
                            q = j * stride - pad + v * dilation
                            if 0 <= r < h and 0 <= q < wd:
                                s += float(x[ci, r, q]) * float(w[o, ci, u, v])
                out[o, i, j] = s
    return out


def conv_transpose2d_scatter(x, w, stride=1, pad=0):
    """Scatter-add of each input element times the kernel, then crop ``pad``."""
    c, h, wd = x.shape
    _, f, kh, kw = w.shape
    full = np.zeros((f, (h - 1) * stride + kh, (wd - 1) * stride + kw))
    for ci in range(c):
        for i in range(h):
            for j in range(wd):
                full[:, i * stride : i * stride + kh, j * stride : j * stride + kw] += x[ci, i, j] * w[ci]
    return full[:, pad : full.shape[1] - pad, pad : full.shape[2] - pad]


def pool_loop(x, kind, k, stride):
    c, h, w = x.shape
    oh, ow = (h - k) // stride + 1, (w - k) // stride + 1
    out = np.zeros((c, oh, ow))
    for ci in range(c):
        for i in range(oh):
            for j in range(ow):
                win = x[ci, i * stride : i * stride + k, j * stride : j * stride + k]
                out[ci, i, j] = win.max() if kind == "max" else win.mean()
    return out


def adaptive_pool_loop(x, bins):
    c, h, w = x.shape
    out = np.zeros((c, bins, bins))
    for i in range(bins):
        r0, r1 = (i * h) // bins, ((i + 1) * h) // bins
        for j in range(bins):
            c0, c1 = (j * w) // bins, ((j + 1) * w) // bins
            out[:, i, j] = x[:, r0:r1, c0:c1].mean(axis=(1, 2))
    return out


def bilinear_loop(x, oh, ow):
    c, h, w = x.shape
    out = np.zeros((c, oh, ow))
    for i in range(oh):
        sy = i * (h - 1) / (oh - 1) if oh > 1 else 0.0
        y0 = min(int(math.floor(sy)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(ow):
            sx = j * (w - 1) / (ow - 1) if ow > 1 else 0.0
            x0 = min(int(math.floor(sx)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[:, i, j] = ((1 - fy) * (1 - fx) * x[:, y0, x0] + (1 - fy) * fx * x[:, y0, x1]
                            + fy * (1 - fx) * x[:, y1, x0] + fy * fx * x[:, y1, x1])
    return out


def q_function(z):
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def confusion_loop(pred, gt, k):
    cm = np.zeros((k, k), dtype=np.int64)
    for p, t in zip(np.ravel(pred), np.ravel(gt)):
        cm[int(t), int(p)] += 1
    return cm


def miou_mpa_loop(pred, gt, k):
    cm = confusion_loop(pred, gt, k)
    ious, pas = [], []
    for c in range(k):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        if tp + fp + fn > 0:
            ious.append(tp / (tp + fp + fn))
        if tp + fn > 0:
            pas.append(tp / (tp + fn))
    return float(np.mean(ious)), float(np.mean(pas))


def ssim_windows(a, b, max_val=255.0):
    """Per-window SSIM with explicit 11x11 Gaussian weights over every valid window."""
    ax = np.arange(11) - 5.0
    g1 = np.exp(-(ax ** 2) / (2 * 1.5 ** 2))
    g = np.outer(g1, g1)
    g /= g.sum()
    c1, c2 = (0.01 * max_val) ** 2, (0.03 * max_val) ** 2
    h, w = a.shape
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            pa, pb = a[i : i + 11, j : j + 11], b[i : i + 11, j : j + 11]
            ma, mb = (g * pa).sum(), (g * pb).sum()
            va = (g * (pa - ma) ** 2).sum()
            vb = (g * (pb - mb) ** 2).sum()
            cov = (g * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def pack_bits_msb(values, width):
    """Reference bit packing: each value as ``width`` bits, MSB first, zero padded to bytes."""
    s = "".join(format(int(v), f"0{width}b") for v in values) if width else ""
    s += "0" * (-len(s) % 8)
    return bytes(int(s[i : i + 8], 2) for i in range(0, len(s), 8))
