"""Bounding-box arithmetic and test-time-augmentation view algebra.

Boxes use continuous corner coordinates: ``(x1, y1)`` is the top-left corner
and ``(x2, y2)`` the far edge, so a box covering pixel columns 3..5 is
``x1=3, x2=6`` and ``area = (x2 - x1) * (y2 - y1)``.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_SCALES: tuple[float, ...] = (0.8, 0.9, 1.0, 1.1, 1.2)


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"box must have positive area, got {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def expand(self, margin: float) -> "BBox":
        return BBox(self.x1 - margin, self.y1 - margin, self.x2 + margin, self.y2 + margin)


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float = 1.0
    class_id: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.class_id != 0:
            raise ValueError("only the single class 0 is supported")


class Flip(enum.Enum):
    NONE = "none"
    H = "h"
    V = "v"
    HV = "hv"

    @property
    def horizontal(self) -> bool:
        return self in (Flip.H, Flip.HV)

    @property
    def vertical(self) -> bool:
        return self in (Flip.V, Flip.HV)


@dataclass(frozen=True)
class ViewTransform:
    """One TTA view: an optional flip in the original frame followed by a scale."""

    flip: Flip = Flip.NONE
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def name(self) -> str:
        return f"{self.flip.value}@{self.scale:g}"

    def view_size(self, width: float, height: float) -> tuple[float, float]:
        return (width * self.scale, height * self.scale)


IDENTITY_VIEW = ViewTransform()


def default_views(scales: Sequence[float] = DEFAULT_SCALES) -> list[ViewTransform]:
    """Scales x {no flip, H, V, HV}: 20 views with the default scale list."""
    flips = (Flip.NONE, Flip.H, Flip.V, Flip.HV)
    return [ViewTransform(f, float(s)) for s, f in itertools.product(scales, flips)]


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def boxes_to_array(boxes: Iterable[BBox]) -> np.ndarray:
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of ``(N, 4)`` and ``(M, 4)`` corner arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(inter > 0, inter / union, 0.0)
    return np.minimum(out, 1.0)


def _flip(box: BBox, flip: Flip, width: float, height: float) -> BBox:
    x1, y1, x2, y2 = box.as_tuple()
    if flip.horizontal:
        x1, x2 = width - x2, width - x1
    if flip.vertical:
        y1, y2 = height - y2, height - y1
    return BBox(x1, y1, x2, y2)


def apply_view(box: BBox, view: ViewTransform, width: float, height: float) -> BBox:
    """Map an original-frame box into the coordinates of ``view``."""
    b = _flip(box, view.flip, width, height)
    s = view.scale
    if s == 1.0:
        return b
    return BBox(b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s)


def invert_view(box: BBox, view: ViewTransform, width: float, height: float) -> BBox:
    """Map a view-frame box back to the original frame.

    ``width`` and ``height`` are the original image dimensions.
    """
    s = view.scale
    if s != 1.0:
        box = BBox(box.x1 / s, box.y1 / s, box.x2 / s, box.y2 / s)
    return _flip(box, view.flip, width, height)


def clip(box: BBox, width: float, height: float) -> BBox | None:
    """Intersect with the image rectangle; ``None`` when nothing is left."""
    x1 = max(box.x1, 0.0)
    y1 = max(box.y1, 0.0)
    x2 = min(box.x2, float(width))
    y2 = min(box.y2, float(height))
    if x2 <= x1 or y2 <= y1:
        return None
    return BBox(x1, y1, x2, y2)
