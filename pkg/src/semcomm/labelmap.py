"""Per-pixel class maps and their palette colorization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError


@dataclass(eq=False)
class LabelMap:
    labels: np.ndarray  # [H, W] uint8
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ContractError(f"label map must be 2-D, got {self.labels.shape}")
        if self.num_classes < 1 or self.num_classes > 255:
            raise ContractError("num_classes must be in [1, 255]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")
        self.labels = self.labels.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def __eq__(self, other) -> bool:
        return (isinstance(other, LabelMap) and self.num_classes == other.num_classes
                and self.labels.shape == other.labels.shape and bool(np.array_equal(self.labels, other.labels)))


def default_palette(n: int = 256) -> np.ndarray:
    """Pascal-VOC style palette: bits of the class index spread over R, G, B."""
    pal = np.zeros((n, 3), dtype=np.uint8)
    for i in range(n):
        c, r, g, b = i, 0, 0, 0
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        pal[i] = (r, g, b)
    return pal


def colorize(label_map: LabelMap, palette: np.ndarray | None = None) -> np.ndarray:
    """RGB image ``[3, H, W]`` in [0, 255] (float32)."""
    pal = default_palette() if palette is None else palette
    if pal.shape[0] < label_map.num_classes:
        raise ContractError("palette has fewer entries than classes")
    return pal[label_map.labels].transpose(2, 0, 1).astype(np.float32)


def read_palette(path: str | Path) -> np.ndarray:
    """Parse ``index R G B`` lines; unspecified entries fall back to the default palette."""
    pal = default_palette()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 'index R G B'")
        try:
            idx, r, g, b = (int(p) for p in parts)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-integer field") from None
        if not (0 <= idx < 256 and all(0 <= v <= 255 for v in (r, g, b))):
            raise FormatError(f"{path}:{lineno}: value out of range")
        pal[idx] = (r, g, b)
    return pal


def write_palette(path: str | Path, num_classes: int, palette: np.ndarray | None = None) -> None:
    pal = default_palette() if palette is None else palette
    lines = [f"{i} {int(pal[i, 0])} {int(pal[i, 1])} {int(pal[i, 2])}" for i in range(num_classes)]
    Path(path).write_text("\n".join(lines) + "\n")
