"""Differentiable image operators on channels-first tensors.

All operators accept ``[C, H, W]`` or ``[N, C, H, W]`` inputs; a 3-D input
is treated as a batch of one and the result is returned 3-D again.
Padding is zero padding everywhere except max pooling (pads with -inf).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, GeometryError, ShapeError
from .tensor import Tensor, as_tensor

# -- numpy kernels (shared with the integer inference path) ---------------------


def conv_output_size(extent: int, k: int, stride: int, pad: int, dilation: int) -> int:
    return (extent + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def im2col_view(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int,
                oh: int, ow: int) -> np.ndarray:
    """Strided view ``[N, C, oh, ow, kh, kw]`` over an already padded input."""
    span_h = (kh - 1) * dilation + 1
    span_w = (kw - 1) * dilation + 1
    v = sliding_window_view(xp, (span_h, span_w), axis=(2, 3))
    return v[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride, ::dilation, ::dilation]


def col2im(cols: np.ndarray, hp: int, wp: int, stride: int, dilation: int) -> np.ndarray:
    """Scatter-add ``cols [N, oh, ow, C, kh, kw]`` into a ``[N, C, hp, wp]`` canvas."""
    n, oh, ow, c, kh, kw = cols.shape
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            out[:, :, r0 : r0 + stride * (oh - 1) + 1 : stride, c0 : c0 + stride * (ow - 1) + 1 : stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


def _pad(x: np.ndarray, pad: int, value: float = 0.0) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


def conv2d_np(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0, dilation: int = 1) -> np.ndarray:
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    oh = conv_output_size(h, kh, stride, pad, dilation)
    ow = conv_output_size(wd, kw, stride, pad, dilation)
    cols = im2col_view(_pad(x, pad), kh, kw, stride, dilation, oh, ow)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # [N, oh, ow, F]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv_transpose2d_np(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    n, c, h, wd = x.shape
    _, f, kh, kw = w.shape
    cols = np.tensordot(x, w, axes=([1], [0]))  # [N, H, W, F, kh, kw]
    full = col2im(cols, (h - 1) * stride + kh, (wd - 1) * stride + kw, stride, 1)
    if pad:
        full = full[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(full)


# -- batching helpers -----------------------------------------------------------


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected [C,H,W] or [N,C,H,W], got {x.shape}")
    return x, False


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return y.reshape(y.shape[1:]) if squeeze else y


# -- convolution -------------------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           pad: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding, stride and dilation."""
    if stride < 1 or dilation < 1 or pad < 0:
        raise GeometryError(f"invalid stride={stride} dilation={dilation} pad={pad}")
    x, squeeze = _batched(x)
    n, c, h, wd = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(f"kernel expects {ck} input channels, input has {c}")
    oh = conv_output_size(h, kh, stride, pad, dilation)
    ow = conv_output_size(wd, kw, stride, pad, dilation)
    if oh < 1 or ow < 1:
        raise GeometryError(f"conv2d output would be {oh}x{ow} for input {h}x{wd}")

    xd, wdat = x.data, kernel.data
    xp = _pad(xd, pad)
    cols = im2col_view(xp, kh, kw, stride, dilation, oh, ow)
    out = np.ascontiguousarray(np.tensordot(cols, wdat, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2))
    parents = [x, kernel]
    if bias is not None:
        if bias.shape != (f,):
            raise ShapeError(f"bias shape {bias.shape} != ({f},)")
        out += bias.data.reshape(1, f, 1, 1)
        parents.append(bias)

    def back(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3])) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.tensordot(g, wdat, axes=([1], [0]))  # [N, oh, ow, C, kh, kw]
            gxp = col2im(gcols, xp.shape[2], xp.shape[3], stride, dilation)
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _unbatch(Tensor._from_op(out, parents, back), squeeze)


def conv_transpose2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d` with kernel layout ``[C_in, F_out, kh, kw]``."""
    if stride < 1 or pad < 0:
        raise GeometryError(f"invalid stride={stride} pad={pad}")
    x, squeeze = _batched(x)
    n, c, h, wd = x.shape
    ck, f, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(f"kernel expects {ck} input channels, input has {c}")
    oh = (h - 1) * stride - 2 * pad + kh
    ow = (wd - 1) * stride - 2 * pad + kw
    if oh < 1 or ow < 1:
        raise GeometryError(f"conv_transpose2d output would be {oh}x{ow}")
    xd, wdat = x.data, kernel.data
    out = conv_transpose2d_np(xd, wdat, stride, pad)

    def back(g):
        gx = conv2d_np(g, wdat, stride, pad) if x.requires_grad else None
        gw = None
        if kernel.requires_grad:
            gcols = im2col_view(_pad(g, pad), kh, kw, stride, 1, h, wd)  # [N, F, H, W, kh, kw]
            gw = np.tensordot(xd, gcols, axes=([0, 2, 3], [0, 2, 3]))
        return gx, gw

    return _unbatch(Tensor._from_op(out, (x, kernel), back), squeeze)


# -- pooling ----------------------------------------------------------------------------


def pool2d(x: Tensor, kind: str, ksize: int, stride: int, pad: int = 0) -> Tensor:
    """Max or average pooling over ``ksize x ksize`` windows."""
    if kind not in ("max", "avg"):
        raise ContractError(f"unknown pooling kind {kind!r}")
    x, squeeze = _batched(x)
    n, c, h, wd = x.shape
    if ksize > h + 2 * pad or ksize > wd + 2 * pad or stride < 1:
        raise GeometryError(f"pool window {ksize} exceeds input {h}x{wd}")
    oh = (h + 2 * pad - ksize) // stride + 1
    ow = (wd + 2 * pad - ksize) // stride + 1
    xp = _pad(x.data, pad, -np.inf if kind == "max" else 0.0)
    cols = im2col_view(xp, ksize, ksize, stride, 1, oh, ow)
    hp, wp = xp.shape[2:]

    if kind == "max":
        flat = cols.reshape(n, c, oh, ow, ksize * ksize)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        def back(g):
            gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(ksize):
                for j in range(ksize):
                    sel = (arg == i * ksize + j) * g
                    gxp[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += sel
            return (gxp[:, :, pad : pad + h, pad : pad + wd],)
    else:
        out = cols.mean(axis=(4, 5))
        area = float(ksize * ksize)

        def back(g):
            gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            share = g / area
            for i in range(ksize):
                for j in range(ksize):
                    gxp[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += share
            return (gxp[:, :, pad : pad + h, pad : pad + wd],)

    return _unbatch(Tensor._from_op(np.ascontiguousarray(out), (x,), back), squeeze)


def _separable(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """``rows @ x @ cols.T`` over the trailing spatial axes (linear, so the adjoint is exact)."""
    rows = rows.astype(x.dtype)
    cols = cols.astype(x.dtype)
    out = np.matmul(np.matmul(rows, x.data), cols.T)
    return Tensor._from_op(out, (x,), lambda g: (np.matmul(np.matmul(rows.T, g), cols),))


def adaptive_pool_matrix(extent: int, bins: int) -> np.ndarray:
    """Averaging matrix whose row ``i`` covers ``[floor(i*E/b), floor((i+1)*E/b))``.

    The windows tile ``[0, extent)`` exactly; ``bins <= extent`` keeps them non-empty.
    """
    m = np.zeros((bins, extent), dtype=np.float64)
    for i in range(bins):
        lo = (i * extent) // bins
        hi = ((i + 1) * extent) // bins
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool2d(x: Tensor, bins: int) -> Tensor:
    x, squeeze = _batched(x)
    h, wd = x.shape[2:]
    if bins < 1:
        raise GeometryError(f"bins must be positive, got {bins}")
    if bins > h or bins > wd:
        raise GeometryError(f"{bins} bins exceed the {h}x{wd} input")
    out = _separable(x, adaptive_pool_matrix(h, bins), adaptive_pool_matrix(wd, bins))
    return _unbatch(out, squeeze)


def bilinear_matrix(src: int, dst: int) -> np.ndarray:
    """Align-corners linear interpolation matrix ``[dst, src]``."""
    m = np.zeros((dst, src), dtype=np.float64)
    if src == 1 or dst == 1:
        m[:, 0] = 1.0
        return m
    scale = (src - 1) / (dst - 1)
    for d in range(dst):
        pos = d * scale
        i0 = min(int(np.floor(pos)), src - 1)
        i1 = min(i0 + 1, src - 1)
        frac = pos - i0
        m[d, i0] += 1.0 - frac
        m[d, i1] += frac
    return m


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Align-corners bilinear enlargement to ``out_h x out_w`` (not smaller than the input)."""
    x, squeeze = _batched(x)
    h, wd = x.shape[2:]
    if out_h < h or out_w < wd:
        raise GeometryError(f"cannot upsample {h}x{wd} to the smaller {out_h}x{out_w}")
    if (out_h, out_w) == (h, wd):
        return _unbatch(x, squeeze)
    out = _separable(x, bilinear_matrix(h, out_h), bilinear_matrix(wd, out_w))
    return _unbatch(out, squeeze)


# -- normalization ------------------------------------------------------------------


def normalize(x: Tensor, kind: str, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
              running_mean: np.ndarray | None = None, running_var: np.ndarray | None = None,
              training: bool = True, momentum: float = 0.1) -> Tensor:
    """Per-channel standardization followed by the affine ``gamma * xhat + beta``.

    ``kind="batch"`` pools statistics over batch and space, ``"instance"``
    over space only.  With ``training=False`` a batch norm uses the running
    statistics, which are updated in place during training.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    if kind not in ("batch", "instance"):
        raise ContractError(f"unknown normalization {kind!r}")
    x, squeeze = _batched(x)
    n, c, h, wd = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"affine params must have shape ({c},)")
    xd = x.data
    g4 = gamma.data.reshape(1, c, 1, 1)
    b4 = beta.data.reshape(1, c, 1, 1)

    if kind == "batch" and not training:
        if running_mean is None or running_var is None:
            raise ContractError("inference-mode batch norm needs running statistics")
        inv = (1.0 / np.sqrt(running_var + eps)).astype(xd.dtype).reshape(1, c, 1, 1)
        xhat = (xd - running_mean.reshape(1, c, 1, 1).astype(xd.dtype)) * inv
        out = g4 * xhat + b4

        def back_eval(g):
            return g * g4 * inv, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        return _unbatch(Tensor._from_op(out, (x, gamma, beta), back_eval), squeeze)

    axes = (0, 2, 3) if kind == "batch" else (2, 3)
    count = n * h * wd if kind == "batch" else h * wd
    mu = xd.mean(axis=axes, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = g4 * xhat + b4

    if kind == "batch" and running_mean is not None and running_var is not None:
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(c)
        running_var *= 1 - momentum
        running_var += momentum * var.reshape(c)

    def back(g):
        dxhat = g * g4
        gx = inv / count * (count * dxhat - dxhat.sum(axis=axes, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _unbatch(Tensor._from_op(out, (x, gamma, beta), back), squeeze)


# -- activations / channel ops ------------------------------------------------------------


def _channel_axis(x: Tensor) -> int:
    if x.ndim == 4:
        return 1
    if x.ndim == 3:
        return 0
    raise ContractError(f"softmax_channel needs a channel axis, got shape {x.shape}")


def softmax_channel(x: Tensor) -> Tensor:
    axis = _channel_axis(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(p, (x,), back)


def log_softmax_channel(x: Tensor) -> Tensor:
    axis = _channel_axis(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), back)


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return x.relu()
    if kind == "sigmoid":
        return x.sigmoid()
    if kind == "tanh":
        return x.tanh()
    if kind == "softmax_channel":
        return softmax_channel(x)
    raise ContractError(f"unknown activation {kind!r}")


def concat_channels(*tensors: Tensor) -> Tensor:
    if not tensors:
        raise ContractError("nothing to concatenate")
    axis = _channel_axis(tensors[0])
    spatial = tensors[0].shape[axis + 1 :]
    lead = tensors[0].shape[:axis]
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or t.shape[axis + 1 :] != spatial or t.shape[:axis] != lead:
            raise ShapeError(f"cannot concatenate {t.shape} with {tensors[0].shape}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return Tensor._from_op(out, tensors, back)


def channel_max(x: Tensor) -> Tensor:
    return x.max(axis=_channel_axis(x), keepdims=True)


def channel_mean(x: Tensor) -> Tensor:
    return x.mean(axis=_channel_axis(x), keepdims=True)


def spatial_mean(x: Tensor) -> Tensor:
    """Global average over H and W, keeping singleton spatial axes."""
    return x.mean(axis=(x.ndim - 2, x.ndim - 1), keepdims=True)


def constant(value, like: Tensor) -> Tensor:
    return as_tensor(np.asarray(value, dtype=like.dtype))
