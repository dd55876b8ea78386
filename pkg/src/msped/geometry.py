"""Axis-aligned box arithmetic.

Boxes are ``(x, y, w, h)`` in continuous pixel coordinates with a top-left
origin; a box covers ``[x, x + w) x [y, y + h)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"box field {name} is not finite: {v!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box: w={self.w!r}, h={self.h!r}")

    @classmethod
    def from_xyxy(cls, x1: float, y1: float, x2: float, y2: float) -> "Box":
        return cls(x1, y1, x2 - x1, y2 - y1)

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2, self.y + self.h / 2)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def contains(self, other: "Box") -> bool:
        return (self.x <= other.x and self.y <= other.y
                and other.x2 <= self.x2 and other.y2 <= self.y2)


def intersection_area(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: Box, b: Box) -> float:
    # areas from corner differences, same arithmetic as iou_matrix
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    area_a = (a.x2 - a.x) * (a.y2 - a.y)
    area_b = (b.x2 - b.x) * (b.y2 - b.y)
    return inter / (area_a + area_b - inter)


def union_box(a: Box, b: Box) -> Box:
    """Smallest box containing both ``a`` and ``b``."""
    x1 = min(a.x, b.x)
    y1 = min(a.y, b.y)
    return Box(x1, y1, max(a.x2, b.x2) - x1, max(a.y2, b.y2) - y1)


def pad(b: Box, factor: float) -> Box:
    """Grow each side outward by ``factor`` times the box's own width/height.

    The center is preserved; the box may extend past the image, use
    :func:`clip` afterwards if needed.
    """
    if factor < 0:
        raise ValueError(f"pad factor must be >= 0, got {factor}")
    if factor == 0:
        return b
    return Box(b.x - factor * b.w, b.y - factor * b.h,
               b.w * (1 + 2 * factor), b.h * (1 + 2 * factor))


def clip(b: Box, img_w: float, img_h: float) -> Optional[Box]:
    """Intersect ``b`` with the image rectangle; ``None`` if nothing is left."""
    if img_w <= 0 or img_h <= 0:
        raise ValueError("image dimensions must be positive")
    x1, y1 = max(b.x, 0.0), max(b.y, 0.0)
    x2, y2 = min(b.x2, float(img_w)), min(b.y2, float(img_h))
    if x2 <= x1 or y2 <= y1:
        return None
    if (x1, y1, x2, y2) == (b.x, b.y, b.x2, b.y2):
        return b
    return Box(x1, y1, x2 - x1, y2 - y1)


def boxes_to_array(boxes: Iterable[Box]) -> np.ndarray:
    """Stack boxes into an ``(N, 4)`` float array of ``x1, y1, x2, y2``."""
    arr = np.array([(b.x, b.y, b.x2, b.y2) for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def iou_matrix(a: Sequence[Box], b: Sequence[Box]) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    A = boxes_to_array(a)
    B = boxes_to_array(b)
    if len(A) == 0 or len(B) == 0:
        return np.zeros((len(A), len(B)))
    iw = np.minimum(A[:, None, 2], B[None, :, 2]) - np.maximum(A[:, None, 0], B[None, :, 0])
    ih = np.minimum(A[:, None, 3], B[None, :, 3]) - np.maximum(A[:, None, 1], B[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (A[:, 2] - A[:, 0]) * (A[:, 3] - A[:, 1])
    area_b = (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union
