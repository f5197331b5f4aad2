"""Axis-aligned box arithmetic and image-region helpers."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Box stored as top-left corner plus width and height, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates: {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box width and height must be positive, got w={self.w}, h={self.h}")

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
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def to_xyxy(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x2, self.y2)

    @classmethod
    def from_xyxy(cls, x1: float, y1: float, x2: float, y2: float) -> "BoundingBox":
        return cls(x1, y1, x2 - x1, y2 - y1)

    def contains(self, px: float, py: float) -> bool:
        """Point containment, boundary inclusive."""
        return self.x <= px <= self.x2 and self.y <= py <= self.y2

    def scaled(self, fx: float, fy: float | None = None) -> "BoundingBox":
        fy = fx if fy is None else fy
        return BoundingBox(self.x * fx, self.y * fy, self.w * fx, self.h * fy)


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.width / 2.0, self.height / 2.0)


class Region(enum.IntEnum):
    """Horizontal image section; the value doubles as the ordinal feature code."""

    LEFT = 0
    CENTER = 1
    RIGHT = 2


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    if (a.x, a.y, a.w, a.h) == (b.x, b.y, b.w, b.h):
        # x + w - x need not round back to w
        return 1.0
    inter = iw * ih
    return min(inter / (a.area + b.area - inter), 1.0)


def _xywh(boxes) -> np.ndarray:
    if not isinstance(boxes, np.ndarray):
        boxes = [(b.x, b.y, b.w, b.h) if isinstance(b, BoundingBox) else b for b in boxes]
    return np.asarray(boxes, dtype=float).reshape(-1, 4)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between two box lists or ``(n, 4)`` arrays of ``x, y, w, h`` rows."""
    a = _xywh(a)
    b = _xywh(b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = bx1 + b[:, 2], by1 + b[:, 3]
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0, None)
    inter = iw * ih
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    same = (a[:, None, :] == b[None, :, :]).all(axis=2)
    return np.where(same, 1.0, np.minimum(inter / union, 1.0))


def region_of(center_x: float, dims: ImageDims) -> Region:
    """Place a horizontal position in the 40:20:40 left/center/right split.

    Both boundaries (0.4 and 0.6 of the width) belong to the center section.
    """
    if not 0 <= center_x <= dims.width:
        raise ValueError(f"center_x={center_x} outside [0, {dims.width}]")
    if center_x < 0.4 * dims.width:
        return Region.LEFT
    if center_x <= 0.6 * dims.width:
        return Region.CENTER
    return Region.RIGHT


def center_distance(box: BoundingBox, dims: ImageDims) -> float:
    cx, cy = box.center
    fx, fy = dims.center
    return math.hypot(cx - fx, cy - fy)
