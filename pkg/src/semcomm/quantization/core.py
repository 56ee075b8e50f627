"""Per-tensor INT8 affine quantization and integer convolution."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff.ops import _pad, conv2d_np, conv_output_size, im2col_view
from ..errors import ContractError, GeometryError, ShapeError
from ..weights import QuantizedTensor

QMIN, QMAX = -128, 127
# float32 represents every integer below 2**24 exactly
_EXACT_F32 = 1 << 24
_I32_LIMIT = (1 << 31) - 1
_HALF_BELOW_F32 = np.nextafter(np.float32(0.5), np.float32(0))


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ContractError(f"scale must be positive and finite, got {self.scale}")
        if not QMIN <= self.zero_point <= QMAX:
            raise ContractError(f"zero point {self.zero_point} outside [{QMIN}, {QMAX}]")

    @property
    def representable(self) -> tuple[float, float]:
        return (QMIN - self.zero_point) * self.scale, (QMAX - self.zero_point) * self.scale


def round_half_away(v: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero (``np.rint`` ties to even).

    Adding the largest float below 0.5 before truncating is exact for every
    finite input; adding 0.5 itself would round ``0.5 - ulp`` up to 1.
    """
    v = np.asarray(v)
    if v.dtype != np.float32:
        v = v.astype(np.float64)
    half = np.nextafter(v.dtype.type(0.5), v.dtype.type(0))
    r = np.copysign(half, v)
    if not isinstance(r, np.ndarray):
        return np.trunc(r + v)
    r += v
    return np.trunc(r, out=r)


def _f32(x: float) -> float:
    # scales are stored as f32 in weight files; keep the in-memory value identical
    return float(np.float32(x))


def calibrate(t, symmetric: bool = True) -> QuantParams:
    """Min/max calibration.  Symmetric: ``max|v| / 127`` with zero point 0.
    Asymmetric: ``(max - min) / 255`` over a range widened to include 0."""
    v = np.asarray(getattr(t, "data", t), dtype=np.float64)
    if v.size == 0:
        raise ContractError("cannot calibrate an empty tensor")
    if symmetric:
        m = float(np.max(np.abs(v)))
        return QuantParams(1.0, 0) if m == 0.0 else QuantParams(_f32(m / QMAX), 0)
    lo, hi = min(float(v.min()), 0.0), max(float(v.max()), 0.0)
    if hi == lo:
        return QuantParams(1.0, 0)
    scale = _f32((hi - lo) / (QMAX - QMIN))
    zp = int(round_half_away(-lo / scale)) + QMIN
    return QuantParams(scale, int(np.clip(zp, QMIN, QMAX)))


def quantize(t, params: QuantParams) -> QuantizedTensor:
    v = np.asarray(getattr(t, "data", t), dtype=np.float64)
    q = np.clip(round_half_away(v / params.scale) + params.zero_point, QMIN, QMAX)
    return QuantizedTensor(q.astype(np.int8), params.scale, params.zero_point)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    return q.dequantize()


def params_of(q: QuantizedTensor) -> QuantParams:
    return QuantParams(q.scale, q.zero_point)


def _centered(q: QuantizedTensor) -> np.ndarray:
    return q.data.astype(np.float32) - np.float32(q.zero_point)


def centered_bound(params: QuantParams) -> int:
    """Largest ``|q - zero_point|`` any quantized value can have."""
    return max(params.zero_point - QMIN, QMAX - params.zero_point)


def quantize_centered(x: np.ndarray, params: QuantParams) -> np.ndarray:
    """``quantize(x).data - zero_point`` as float32, computed without an int8 round trip.

    Clipping to the integer bounds before rounding gives the same result as
    rounding first, and lets non-negative ranges skip the sign handling.
    """
    lo, hi = QMIN - params.zero_point, QMAX - params.zero_point
    v = np.divide(x, np.float32(params.scale), dtype=np.float32)
    np.clip(v, lo, hi, out=v)
    if lo < 0:
        return round_half_away(v)
    v += _HALF_BELOW_F32
    return np.trunc(v, out=v)


def integer_conv(xc: np.ndarray, wc: np.ndarray, stride: int = 1, pad: int = 0, dilation: int = 1,
                 max_prod: float | None = None, nonneg: bool = False) -> np.ndarray:
    """Exact integer convolution of centered operands held as float32 ``[N, C, H, W]``.

    Channels are split into chunks whose partial sums stay below 2**24, where
    float32 GEMMs are exact; chunks are then added as int32.  A single chunk is
    returned as float32 holding exact integers, several chunks as int32.
    ``max_prod`` bounds ``|x| * |w|``; it is measured when not given.
    ``nonneg`` promises ``xc >= 0``, which saves a pass in the bound check.
    """
    n, c, h, w = xc.shape
    f, ck, kh, kw = wc.shape
    if ck != c:
        raise ShapeError(f"kernel expects {ck} input channels, input has {c}")
    oh = conv_output_size(h, kh, stride, pad, dilation)
    ow = conv_output_size(w, kw, stride, pad, dilation)
    if oh < 1 or ow < 1 or stride < 1 or dilation < 1 or pad < 0:
        raise GeometryError(f"invalid convolution geometry for input {h}x{w}")
    if max_prod is None:
        max_prod = float(np.max(np.abs(xc), initial=0.0)) * float(np.max(np.abs(wc), initial=0.0))
    taps = c * kh * kw
    if max_prod * taps > _I32_LIMIT:
        raise ContractError(f"int32 accumulator could overflow ({taps} taps)")
    per_chunk = c
    if max_prod * taps >= _EXACT_F32:
        # tighter exact bound: every window sums at most kh*kw pixels' channel-L1 norms
        w_max = float(np.max(np.abs(wc), initial=0.0))
        mag = xc if nonneg else np.abs(xc)
        l1 = float(mag.sum(axis=1).max(initial=0.0))
        if l1 * w_max * kh * kw >= _EXACT_F32:
            per_chunk = max(1, int((_EXACT_F32 - 1) // max_prod) // (kh * kw))
    xp = _pad(xc, pad)
    acc = None
    for lo in range(0, c, per_chunk):
        hi = min(c, lo + per_chunk)
        cols = im2col_view(xp[:, lo:hi], kh, kw, stride, dilation, oh, ow)
        part = np.tensordot(cols, wc[:, lo:hi], axes=([1, 4, 5], [1, 2, 3]))
        if per_chunk < c:
            part = part.astype(np.int32)
        acc = part if acc is None else acc + part
    return np.ascontiguousarray(acc.transpose(0, 3, 1, 2))


def qconv2d_accumulate(q_input: QuantizedTensor, q_kernel: QuantizedTensor, stride: int = 1, pad: int = 0,
                       dilation: int = 1) -> np.ndarray:
    """Exact ``sum (x_q - zp_x)(w_q - zp_w)`` per output element as int32.

    Padding uses the input zero point, i.e. real zero.
    """
    x = q_input.data
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4 or q_kernel.data.ndim != 4:
        raise ShapeError("qconv2d expects [N, C, H, W] input and [F, C, kh, kw] kernel")
    xc = x.astype(np.float32) - np.float32(q_input.zero_point)
    acc = integer_conv(xc, _centered(q_kernel), stride, pad, dilation).astype(np.int32)
    return acc[0] if squeeze else acc


def qconv2d(q_input: QuantizedTensor, q_kernel: QuantizedTensor, bias_f32, out_params: QuantParams,
            stride: int = 1, pad: int = 0, dilation: int = 1) -> QuantizedTensor:
    """Integer convolution, float bias add, requantization to ``out_params``."""
    acc = qconv2d_accumulate(q_input, q_kernel, stride, pad, dilation)
    real = acc.astype(np.float64) * (q_input.scale * q_kernel.scale)
    if bias_f32 is not None:
        b = np.asarray(bias_f32, dtype=np.float64)
        real = real + b.reshape((-1, 1, 1))
    return quantize(real, out_params)


def accumulation_error_bound(x: np.ndarray, w_hat: np.ndarray, in_scale: float, w_scale: float,
                             stride: int = 1, pad: int = 0, dilation: int = 1) -> np.ndarray:
    """Per-element bound on ``|conv(x_hat, w_hat) - conv(x, w)|`` before requantization.

    Each tap contributes at most ``|x| * w_scale / 2 + |w_hat| * in_scale / 2``
    when both operands are rounded to the nearest grid point without clamping.
    """
    ax = np.abs(np.asarray(x, dtype=np.float64))
    aw = np.abs(np.asarray(w_hat, dtype=np.float64))
    ones_w = np.ones_like(aw)
    ones_x = np.ones_like(ax)
    xb = ax if ax.ndim == 4 else ax[None]
    ob = ones_x if ones_x.ndim == 4 else ones_x[None]
    bound = (conv2d_np(xb, ones_w, stride, pad, dilation) * (w_scale / 2)
             + conv2d_np(ob, aw, stride, pad, dilation) * (in_scale / 2))
    return bound if ax.ndim == 4 else bound[0]
