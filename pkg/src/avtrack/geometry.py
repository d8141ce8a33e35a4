"""Axis-aligned boxes in pixel coordinates and their overlap measures."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BBox:
    """Box stored as (x, y, w, h) with (x, y) the top-left corner."""

    x: float
    y: float
    w: float
    h: float

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls(x1, y1, x2 - x1, y2 - y1)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @property
    def x1(self) -> float:
        return self.x

    @property
    def y1(self) -> float:
        return self.y

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return max(self.w, 0.0) * max(self.h, 0.0)

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def scaled(self, s: float) -> "BBox":
        return BBox.from_center(self.cx, self.cy, self.w * s, self.h * s)

    def clipped(self, width: float, height: float) -> "BBox":
        x1 = min(max(self.x1, 0.0), width)
        y1 = min(max(self.y1, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)
        return BBox.from_corners(x1, y1, x2, y2)

    def astuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


def intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    return max(iw, 0.0) * max(ih, 0.0)


def iou(a: BBox, b: BBox) -> float:
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    """IoU minus the fraction of the enclosing box not covered by the union."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    ew = max(a.x2, b.x2) - min(a.x1, b.x1)
    eh = max(a.y2, b.y2) - min(a.y1, b.y1)
    enclosing = ew * eh
    if union <= 0.0 or enclosing <= 0.0:
        return -1.0 if enclosing > 0.0 else 0.0
    return inter / union - (enclosing - union) / enclosing


def center_distance(a: BBox, b: BBox) -> float:
    return ((a.cx - b.cx) ** 2 + (a.cy - b.cy) ** 2) ** 0.5
