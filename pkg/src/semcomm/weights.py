"""SCWT weight files.

Little-endian layout::

    b"SCWT" | u32 version (=1) | u32 tensor count
    per tensor: u16 name length | utf-8 name | u8 dtype (0=f32, 1=i8) | u8 ndim
                | u32 dims[ndim] | raw data | (dtype 1 only) f32 scale, i32 zero point
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .errors import FormatError

MAGIC = b"SCWT"
VERSION = 1
DTYPE_F32 = 0
DTYPE_I8 = 1


@dataclass
class QuantizedTensor:
    """INT8 storage with its per-tensor affine parameters."""

    data: np.ndarray  # int8
    scale: float
    zero_point: int

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def nbytes(self) -> int:
        return self.data.size

    def dequantize(self) -> np.ndarray:
        return ((self.data.astype(np.float32) - np.float32(self.zero_point)) * np.float32(self.scale)).astype(np.float32)


WeightValue = Union[np.ndarray, QuantizedTensor]


def dumps(tensors: Mapping[str, WeightValue]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, value in tensors.items():
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        quantized = isinstance(value, QuantizedTensor)
        arr = value.data if quantized else np.asarray(value)
        if arr.ndim > 255:
            raise FormatError("too many dimensions")
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<BB", DTYPE_I8 if quantized else DTYPE_F32, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        if quantized:
            buf.write(np.ascontiguousarray(arr, dtype=np.int8).tobytes())
            buf.write(struct.pack("<fi", value.scale, value.zero_point))
        else:
            buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> "OrderedDict[str, WeightValue]":
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("truncated SCWT file")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError("not an SCWT file (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"unsupported SCWT version {version}")
    out: OrderedDict[str, WeightValue] = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        try:
            name = bytes(take(name_len)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("tensor name is not utf-8") from exc
        dtype, ndim = struct.unpack("<BB", take(2))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count_elems = int(np.prod(dims)) if ndim else 1
        if dtype == DTYPE_F32:
            arr = np.frombuffer(take(4 * count_elems), dtype="<f4").astype(np.float32).reshape(dims)
            out[name] = arr
        elif dtype == DTYPE_I8:
            arr = np.frombuffer(take(count_elems), dtype=np.int8).copy().reshape(dims)
            scale, zp = struct.unpack("<fi", take(8))
            out[name] = QuantizedTensor(arr, float(scale), int(zp))
        else:
            raise FormatError(f"unknown dtype code {dtype}")
    if pos != len(view):
        raise FormatError("trailing bytes after last tensor")
    return out


def save_weights(path: Union[str, Path], tensors: Mapping[str, WeightValue]) -> int:
    blob = dumps(tensors)
    Path(path).write_bytes(blob)
    return len(blob)


def load_weights(path: Union[str, Path]) -> "OrderedDict[str, WeightValue]":
    return loads(Path(path).read_bytes())


def prefixed(prefix: str, state: Mapping[str, WeightValue]) -> "OrderedDict[str, WeightValue]":
    return OrderedDict((f"{prefix}.{k}", v) for k, v in state.items())


def split_prefix(prefix: str, state: Mapping[str, WeightValue]) -> "OrderedDict[str, WeightValue]":
    head = prefix + "."
    return OrderedDict((k[len(head):], v) for k, v in state.items() if k.startswith(head))


def as_float(state: Mapping[str, WeightValue]) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((k, v.dequantize() if isinstance(v, QuantizedTensor) else v) for k, v in state.items())
