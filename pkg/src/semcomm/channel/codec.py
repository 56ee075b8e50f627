"""Lossless byte format for label maps sent over the channel.

Layout (little-endian): ``b"SCPL"``, u8 version, u16 width, u16 height,
u8 num_classes, u8 codec, then the body.  Codec 0 packs every label into
``ceil(log2 K)`` bits, MSB first.  Codec 1 is a run-length stream of
``(u8 run length, packed label)`` fields packed the same way.  Both bodies are
zero-padded to a whole byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, CorruptionError, FormatError
from ..labelmap import LabelMap

MAGIC = b"SCPL"
VERSION = 1
CODEC_BITPACK = 0
CODEC_RLE = 1
MAX_RUN = 255
MAX_EXTENT = 65535
_HEADER = struct.Struct("<4sBHHBB")
HEADER_BYTES = _HEADER.size


def bits_per_label(num_classes: int) -> int:
    """``ceil(log2 K)``; zero for a single class."""
    return (int(num_classes) - 1).bit_length()


@dataclass(frozen=True)
class Payload:
    width: int
    height: int
    num_classes: int
    codec: int
    body: bytes
    version: int = VERSION

    def to_bytes(self) -> bytes:
        return _HEADER.pack(MAGIC, self.version, self.width, self.height, self.num_classes, self.codec) + self.body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Payload":
        data = bytes(data)
        if len(data) < HEADER_BYTES:
            raise CorruptionError(f"payload of {len(data)} bytes is shorter than its header")
        magic, version, width, height, k, codec = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise CorruptionError(f"bad payload magic {magic!r}")
        if version != VERSION:
            raise CorruptionError(f"unsupported payload version {version}")
        return cls(width, height, k, codec, data[HEADER_BYTES:], version)

    @property
    def nbytes(self) -> int:
        return HEADER_BYTES + len(self.body)


def _to_bits(values: np.ndarray, width: int) -> np.ndarray:
    """Unsigned integers -> ``[n * width]`` bits, MSB first."""
    if width == 0:
        return np.zeros(0, dtype=np.uint8)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint32)
    return ((values.astype(np.uint32)[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def _from_bits(bits: np.ndarray, width: int) -> np.ndarray:
    weights = np.uint32(1) << np.arange(width - 1, -1, -1, dtype=np.uint32)
    return bits.reshape(-1, width).astype(np.uint32) @ weights


def runs(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-major runs split so that no run exceeds 255 pixels: (lengths, values)."""
    flat = labels.ravel()
    if flat.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.uint8)
    starts = np.flatnonzero(np.r_[True, flat[1:] != flat[:-1]])
    lengths = np.diff(np.r_[starts, flat.size])
    values = flat[starts]
    pieces = -(-lengths // MAX_RUN)
    values = np.repeat(values, pieces)
    out = np.full(pieces.sum(), MAX_RUN, dtype=np.int64)
    last = np.cumsum(pieces) - 1
    out[last] = lengths - (pieces - 1) * MAX_RUN
    return out, values


def _bitpack_body(labels: np.ndarray, b: int) -> bytes:
    return np.packbits(_to_bits(labels.ravel(), b)).tobytes()


def _rle_body(labels: np.ndarray, b: int) -> bytes:
    lengths, values = runs(labels)
    fields = (lengths.astype(np.uint32) << b) | values.astype(np.uint32)
    return np.packbits(_to_bits(fields, 8 + b)).tobytes()


def encode_label_map(m: LabelMap, num_classes: int | None = None) -> Payload:
    """Pack ``m``; run-length coding is used only when its body is strictly smaller."""
    k = m.num_classes if num_classes is None else int(num_classes)
    if not 1 <= k <= 255:
        raise ContractError("num_classes must be in [1, 255]")
    if m.labels.size and int(m.labels.max()) >= k:
        raise ContractError(f"label {int(m.labels.max())} does not fit {k} classes")
    if m.width > MAX_EXTENT or m.height > MAX_EXTENT:
        raise FormatError(f"label map {m.height}x{m.width} exceeds the u16 header fields")
    b = bits_per_label(k)
    packed = _bitpack_body(m.labels, b)
    rle = _rle_body(m.labels, b)
    if len(rle) < len(packed):
        return Payload(m.width, m.height, k, CODEC_RLE, rle)
    return Payload(m.width, m.height, k, CODEC_BITPACK, packed)


def decode_payload(p: Payload | bytes, num_classes: int | None = None) -> LabelMap:
    """Exact inverse of :func:`encode_label_map`; any inconsistency is a :class:`CorruptionError`."""
    if not isinstance(p, Payload):
        p = Payload.from_bytes(p)
    if p.version != VERSION:
        raise CorruptionError(f"unsupported payload version {p.version}")
    k = p.num_classes
    if num_classes is not None and k != num_classes:
        raise CorruptionError(f"payload declares {k} classes, expected {num_classes}")
    if not 1 <= k <= 255:
        raise CorruptionError(f"invalid class count {k}")
    b = bits_per_label(k)
    n = p.width * p.height
    bits = np.unpackbits(np.frombuffer(p.body, dtype=np.uint8))
    if p.codec == CODEC_BITPACK:
        need = n * b
        if len(p.body) != -(-need // 8):
            raise CorruptionError(f"bit-packed body has {len(p.body)} bytes, expected {-(-need // 8)}")
        labels = _from_bits(bits[:need], b) if b else np.zeros(n, np.uint32)
    elif p.codec == CODEC_RLE:
        labels = _decode_rle(bits, b, n, len(p.body))
    else:
        raise CorruptionError(f"unknown codec {p.codec}")
    if labels.size and int(labels.max()) >= k:
        raise CorruptionError(f"decoded label {int(labels.max())} out of range for {k} classes")
    return LabelMap(labels.reshape(p.height, p.width).astype(np.uint8), k)


def _decode_rle(bits: np.ndarray, b: int, n: int, body_bytes: int) -> np.ndarray:
    width = 8 + b
    fields = _from_bits(bits[: len(bits) - len(bits) % width], width)
    lengths = (fields >> b).astype(np.int64)
    values = fields & ((1 << b) - 1)
    ends = np.cumsum(lengths)
    used = int(np.searchsorted(ends, n)) + 1 if n else 0
    if n and (used > len(ends) or ends[used - 1] != n):
        raise CorruptionError("run lengths do not add up to the map size")
    if np.any(lengths[:used] == 0):
        raise CorruptionError("zero-length run")
    if body_bytes != -(-(used * width) // 8):
        raise CorruptionError("run-length body has trailing or missing bytes")
    return np.repeat(values[:used], lengths[:used])
