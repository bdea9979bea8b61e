from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from common.errors import ContractError, DimensionError, OutOfBoundsError


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates with a detector confidence."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ContractError(f"Degenerate box {self.as_tuple()}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ContractError(f"Box confidence must lie in [0, 1], got {self.confidence}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.x_min, self.y_min, self.x_max, self.y_max

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def pixel_bounds(self) -> tuple[int, int, int, int]:
        return (
            round_half_up(self.x_min), round_half_up(self.y_min),
            round_half_up(self.x_max), round_half_up(self.y_max),
        )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    iy = max(0.0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def crop_patch(image: np.ndarray, box: BoundingBox, min_confidence: float = 0.5) -> np.ndarray | None:
    """Cut ``box`` out of an [H, W, 3] image.

    Returns None (skip) when the box is below ``min_confidence``. Boxes are
    rounded half-up to pixel indices and never clipped.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"Expected an [H, W, 3] image, got shape {image.shape}")
    if box.confidence < min_confidence:
        return None
    height, width = image.shape[:2]
    x0, y0, x1, y1 = box.pixel_bounds()
    if x0 < 0 or y0 < 0 or x1 > width or y1 > height or x0 >= x1 or y0 >= y1:
        raise OutOfBoundsError(
            f"Box {box.as_tuple()} (pixels {(x0, y0, x1, y1)}) exceeds image of size {width}x{height}"
        )
    return image[y0:y1, x0:x1]
