"""Binary NetPBM IO: PPM (P6) for RGB images, PGM (P5) for label maps.

Only 8-bit files (max value 255) are accepted.  Parsing is strict: any
malformed header, truncated raster or trailing data raises :class:`FormatError`.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError
from .labelmap import LabelMap

_WHITESPACE = b" \t\n\r\v\f"
_MAX_DIGITS = 9


def _header_fields(data: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` unsigned decimal fields after the 2-byte magic.

    Returns the values and the offset of the raster, which starts after the
    single whitespace byte following the last field.
    """
    pos, fields, n = 2, [], len(data)
    while len(fields) < count:
        while pos < n and (data[pos] in _WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                end = data.find(b"\n", pos)
                if end < 0:
                    raise FormatError("unterminated comment in header")
                pos = end
            pos += 1
        start = pos
        while pos < n and 48 <= data[pos] <= 57:
            pos += 1
        if pos == start:
            raise FormatError("expected a decimal number in header")
        if pos - start > _MAX_DIGITS:
            raise FormatError("header number too long")
        fields.append(int(data[start:pos]))
    if pos >= n or data[pos] not in _WHITESPACE:
        raise FormatError("header must end with one whitespace byte")
    return fields, pos + 1


def parse_netpbm(data: bytes) -> tuple[bytes, np.ndarray]:
    """``(magic, raster)`` with raster ``[H, W]`` (P5) or ``[H, W, 3]`` (P6) uint8."""
    data = bytes(data)
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported NetPBM magic {magic!r}")
    (width, height, maxval), offset = _header_fields(data, 3)
    if width < 1 or height < 1:
        raise FormatError(f"invalid image size {width}x{height}")
    if maxval != 255:
        raise FormatError(f"only max value 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    raster = data[offset:]
    if len(raster) < size:
        raise FormatError(f"truncated raster: {len(raster)} of {size} bytes")
    if len(raster) > size:
        raise FormatError(f"{len(raster) - size} trailing bytes after raster")
    arr = np.frombuffer(raster, dtype=np.uint8)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return magic, arr.reshape(shape).copy()


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def encode_ppm(image: np.ndarray) -> bytes:
    """``[3, H, W]`` pixels in [0, 255] (rounded, clipped) -> P6 bytes."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise FormatError(f"PPM needs a [3, H, W] image, got {image.shape}")
    pix = np.clip(np.rint(image), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    h, w = pix.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pix).tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    magic, raster = parse_netpbm(data)
    if magic != b"P6":
        raise FormatError("expected a P6 (RGB) image")
    return raster.transpose(2, 0, 1).astype(np.float32)


def encode_pgm(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    if values.ndim != 2:
        raise FormatError(f"PGM needs a 2-D array, got {values.shape}")
    if values.size and (values.min() < 0 or values.max() > 255):
        raise FormatError("PGM values must lie in [0, 255]")
    h, w = values.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(values, dtype=np.uint8).tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    magic, raster = parse_netpbm(data)
    if magic != b"P5":
        raise FormatError("expected a P5 (grayscale) image")
    return raster


def read_ppm(path) -> np.ndarray:
    """RGB image ``[3, H, W]`` float32 with pixels in [0, 255]."""
    return decode_ppm(_read(path))


def write_ppm(path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(image))


def read_label_pgm(path, num_classes: int) -> LabelMap:
    """Label map stored as raw class indices in a PGM."""
    raster = decode_pgm(_read(path))
    if raster.size and int(raster.max()) >= num_classes:
        raise FormatError(f"{path}: label {int(raster.max())} does not fit {num_classes} classes")
    return LabelMap(raster, num_classes)


def write_label_pgm(path, labels: LabelMap | np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(getattr(labels, "labels", labels)))
