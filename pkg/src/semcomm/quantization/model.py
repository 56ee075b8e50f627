"""Whole-model post-training quantization.

Storage: every float tensor of a weight file becomes per-tensor symmetric INT8.
Inference: each conv unit (conv, optional batch norm folded into it, activation)
is swapped for an integer convolution whose input is quantized with parameters
calibrated on sample images.  Glue operations between convolutions (pooling,
attention gates, resizing) stay in float.
"""

from __future__ import annotations

import copy
import json
import statistics
import time
import warnings
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Callable, Mapping

import numpy as np

from ..autodiff import ops
from ..autodiff.nn import Conv2d, ConvNormAct, Module
from ..autodiff.tensor import Tensor, no_grad
from ..errors import StatisticsError
from ..weights import QuantizedTensor, WeightValue, dumps
from .core import QuantParams, calibrate, centered_bound, integer_conv, quantize, quantize_centered


@dataclass
class SizeReport:
    tensors: int
    float_param_bytes: int
    int8_param_bytes: int
    param_ratio: float
    float_file_bytes: int
    int8_file_bytes: int
    file_ratio: float
    warning: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def quantize_model(weights: Mapping[str, WeightValue]) -> tuple["OrderedDict[str, WeightValue]", SizeReport]:
    """Quantize every float tensor symmetrically; report parameter and file sizes."""
    out: OrderedDict[str, WeightValue] = OrderedDict()
    float_bytes = int8_bytes = 0
    for name, value in weights.items():
        if isinstance(value, QuantizedTensor):
            out[name] = value
            int8_bytes += value.nbytes
            float_bytes += 4 * value.data.size
            continue
        arr = np.asarray(value, dtype=np.float32)
        out[name] = quantize(arr, calibrate(arr, symmetric=True))
        float_bytes += arr.nbytes
        int8_bytes += arr.size
    float_file = len(dumps(OrderedDict((k, np.asarray(v.dequantize() if isinstance(v, QuantizedTensor) else v,
                                                       dtype=np.float32)) for k, v in weights.items())))
    int8_file = len(dumps(out))
    warning = None
    if int8_bytes == 0:
        warning = "model has no parameters; ratio reported as 1.0"
        warnings.warn(warning)
        ratio = 1.0
    else:
        ratio = float_bytes / int8_bytes
    report = SizeReport(len(out), float_bytes, int8_bytes, ratio, float_file, int8_file,
                        float_file / int8_file, warning)
    return out, report


def fold_batch_norm(unit: ConvNormAct) -> tuple[np.ndarray, np.ndarray]:
    """Effective ``(weight, bias)`` of a conv followed by eval-mode batch norm."""
    w = unit.conv.weight.data.astype(np.float64)
    b = np.zeros(w.shape[0]) if unit.conv.bias is None else unit.conv.bias.data.astype(np.float64)
    norm = unit.norm
    if norm is None or norm.kind != "batch":
        return w, b
    mean = norm._buffers["running_mean"].astype(np.float64)
    var = norm._buffers["running_var"].astype(np.float64)
    k = norm.weight.data.astype(np.float64) / np.sqrt(var + norm.eps)
    return w * k[:, None, None, None], (b - mean) * k + norm.bias.data.astype(np.float64)


class _Observer(Module):
    """Runs a float unit unchanged while recording the range of its inputs."""

    def __init__(self, unit: Module):
        super().__init__()
        self.unit = unit
        self.lo, self.hi = np.inf, -np.inf

    def forward(self, x: Tensor) -> Tensor:
        self.lo = min(self.lo, float(x.data.min()))
        self.hi = max(self.hi, float(x.data.max()))
        return self.unit(x)


class QConv(Module):
    """Integer convolution with folded batch norm; float epilogue (bias, instance norm, activation)."""

    def __init__(self, unit: Module, in_params: QuantParams):
        super().__init__()
        conv = unit.conv if isinstance(unit, ConvNormAct) else unit
        if isinstance(unit, ConvNormAct):
            w, b = fold_batch_norm(unit)
            self.norm = unit.norm if unit.norm is not None and unit.norm.kind != "batch" else None
            self.act = unit.act
        else:
            w = conv.weight.data.astype(np.float64)
            b = np.zeros(w.shape[0]) if conv.bias is None else conv.bias.data.astype(np.float64)
            self.norm, self.act = None, None
        self.weight_q = quantize(w, calibrate(w, symmetric=True))
        self.bias = b.astype(np.float32)
        self._bias4 = self.bias.reshape(1, -1, 1, 1)
        self.in_params = in_params
        self.stride, self.pad, self.dilation = conv.stride, conv.pad, conv.dilation
        self._weight_c = self.weight_q.data.astype(np.float32)
        self._out_scale = np.float32(in_params.scale * self.weight_q.scale)
        self._nonneg = in_params.zero_point == -128
        self._max_prod = float(centered_bound(in_params) * np.max(np.abs(self._weight_c), initial=0.0))

    def forward(self, x: Tensor) -> Tensor:
        xc = quantize_centered(x.data, self.in_params)
        squeeze = xc.ndim == 3
        acc = integer_conv(xc[None] if squeeze else xc, self._weight_c, self.stride, self.pad, self.dilation,
                           self._max_prod, self._nonneg)
        acc = acc.astype(np.float32, copy=False)
        acc *= self._out_scale
        acc += self._bias4
        if squeeze:
            acc = acc[0]
        if self.norm is None and self.act == "relu":
            return Tensor(np.maximum(acc, 0, out=acc))
        y = Tensor(acc)
        if self.norm is not None:
            y = self.norm(y)
        if self.act == "relu":
            y = y.relu()
        elif self.act == "leaky":
            y = y.leaky_relu(0.2)
        elif self.act is not None:
            y = ops.activate(y, self.act)
        return y


def _swap(module: Module, make: Callable[[Module], Module]) -> None:
    for name, value in list(vars(module).items()):
        if isinstance(value, (ConvNormAct, Conv2d)):
            setattr(module, name, make(value))
        elif isinstance(value, Module):
            _swap(value, make)
        elif isinstance(value, list):
            for i, item in enumerate(value):
                if isinstance(item, (ConvNormAct, Conv2d)):
                    value[i] = make(item)
                elif isinstance(item, Module):
                    _swap(item, make)


def build_int8_model(model: Module, calibration: np.ndarray, batch_size: int = 8) -> Module:
    """Copy ``model`` with every conv unit replaced by a calibrated :class:`QConv`.

    ``calibration`` is a batch of network-ready inputs (same normalization as
    the float model expects).  The float model is not modified.
    """
    qmodel = copy.deepcopy(model).eval()
    observers: list[_Observer] = []

    def observe(unit):
        obs = _Observer(unit)
        observers.append(obs)
        return obs

    _swap(qmodel, observe)
    with no_grad():
        for i in range(0, len(calibration), batch_size):
            qmodel(Tensor(calibration[i : i + batch_size]))

    def replace(module: Module) -> None:
        for name, value in list(vars(module).items()):
            if isinstance(value, _Observer):
                setattr(module, name, _quantized(value))
            elif isinstance(value, Module):
                replace(value)
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, _Observer):
                        value[i] = _quantized(item)
                    elif isinstance(item, Module):
                        replace(item)

    def _quantized(obs: _Observer) -> QConv:
        if not np.isfinite(obs.lo):
            raise StatisticsError("a convolution was never reached during calibration")
        return QConv(obs.unit, calibrate(np.array([obs.lo, obs.hi]), symmetric=False))

    replace(qmodel)
    return qmodel.eval()


def paired_medians(fns: list[Callable[[], object]], runs: int = 20, warmup: int = 2) -> list[float]:
    """Median wall-clock time of each callable, alternating them run by run so
    that load changes on the machine affect all of them alike."""
    if runs < 1:
        raise StatisticsError("need at least one timed run")
    for _ in range(warmup):
        for fn in fns:
            fn()
    times: list[list[float]] = [[] for _ in fns]
    for _ in range(runs):
        for fn, bucket in zip(fns, times):
            t0 = time.perf_counter()
            fn()
            bucket.append(time.perf_counter() - t0)
    resolution = time.get_clock_info("perf_counter").resolution
    medians = [statistics.median(t) for t in times]
    if min(medians) <= resolution * 10:
        raise StatisticsError("run time is below the timer resolution")
    return medians


def quantization_speedup_report(float_model: Module, int8_model: Module, images: np.ndarray,
                                runs: int = 20, evaluate: Callable[[Module], float] | None = None) -> dict:
    """Median wall-clock times of both variants on ``images`` and the relative speedup.

    ``evaluate`` maps a model to an mIoU on held-out data; when given, the
    report includes ``delta_mIoU = mIoU_float - mIoU_int8``.
    """
    float_model.eval()
    int8_model.eval()
    batch = Tensor(np.asarray(images, dtype=np.float32))

    def runner(m):
        def run():
            with no_grad():
                m(batch)
        return run

    t_float, t_quant = paired_medians([runner(float_model), runner(int8_model)], runs)
    report = {"t_float": t_float, "t_quant": t_quant, "QAR": (t_float - t_quant) / t_float}
    if evaluate is not None:
        m_float, m_quant = evaluate(float_model), evaluate(int8_model)
        report.update({"mIoU_float": m_float, "mIoU_int8": m_quant, "delta_mIoU": m_float - m_quant})
    return report
