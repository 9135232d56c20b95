"""Boxes, spatial relation predicates, and the flat color vocabulary.

Everything here is deterministic arithmetic shared by the scene model, the
mock backends, and the evaluation predicates. Boxes are pixel-space
(x, y, w, h) with the origin at the top-left corner.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

# Fraction of the frame width used as the separation margin for directional
# relations and as the adjacency gap bound.
RELATION_MARGIN = 0.05

# Canonical relation vocabulary. "other" carries free text and is never
# judged geometrically.
CORE_RELATIONS = ("left_of", "right_of", "above", "below", "next_to", "on", "under")

# 12-color table for the flat-shape world. Values are chosen well separated
# so nearest-color classification is stable under mild blending.
COLOR_TABLE: dict[str, tuple[int, int, int]] = {
    "red": (220, 40, 40),
    "green": (40, 170, 60),
    "blue": (50, 90, 220),
    "yellow": (235, 220, 50),
    "orange": (240, 150, 40),
    "purple": (140, 60, 200),
    "pink": (240, 130, 190),
    "brown": (140, 90, 40),
    "black": (20, 20, 20),
    "white": (255, 255, 255),
    "gray": (128, 128, 128),
    "cyan": (60, 210, 220),
}

COLOR_NAMES = tuple(COLOR_TABLE)

# Canvas fill outside any object. Deliberately not a member of the table so
# segmentation can rely on exact inequality.
BACKGROUND_RGB = (243, 243, 240)

# Secondary stripe color; stripes are 5 px object color to 3 px secondary so
# majority-color classification still reports the object color.
STRIPE_SECONDARY = (60, 60, 60)
STRIPE_PERIOD = 8
STRIPE_ON = 5


@dataclass(frozen=True, slots=True)
class Box:
    """Axis-aligned pixel box, width and height at least 1."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"degenerate box {self.x, self.y, self.w, self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    def translated(self, dx: int, dy: int) -> "Box":
        return Box(self.x + dx, self.y + dy, self.w, self.h)

    def contains(self, other: "Box") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


def intersect_area(a: Box, b: Box) -> int:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0
    return iw * ih


def iou(a: Box, b: Box) -> float:
    inter = intersect_area(a, b)
    if inter == 0:
        return 0.0
    return inter / float(a.area + b.area - inter)


def union_box(a: Box, b: Box) -> Box:
    x = min(a.x, b.x)
    y = min(a.y, b.y)
    return Box(x, y, max(a.x2, b.x2) - x, max(a.y2, b.y2) - y)


def pad_box(box: Box, fraction: float, frame_w: int, frame_h: int) -> Box:
    """Grow a box by `fraction` of its own size per side, clamped to frame."""
    px = int(round(box.w * fraction))
    py = int(round(box.h * fraction))
    x = max(0, box.x - px)
    y = max(0, box.y - py)
    x2 = min(frame_w, box.x2 + px)
    y2 = min(frame_h, box.y2 + py)
    return Box(x, y, max(1, x2 - x), max(1, y2 - y))


def box_gap(a: Box, b: Box) -> float:
    """Shortest edge-to-edge distance between two boxes, 0 if they touch."""
    dx = max(a.x - b.x2, b.x - a.x2, 0)
    dy = max(a.y - b.y2, b.y - a.y2, 0)
    return math.hypot(dx, dy)


def horizontal_overlap(a: Box, b: Box) -> bool:
    return min(a.x2, b.x2) - max(a.x, b.x) > 0


def relation_holds(relation: str, subject: Box, obj: Box, frame_w: int, frame_h: int) -> bool:
    """Geometric truth of `subject <relation> obj` with the standard margin.

    Directional relations require center separation beyond the margin
    (RELATION_MARGIN of the frame width). next_to requires the edge gap to be
    within the margin. on/under additionally require near-contact and
    horizontal overlap.
    """
    delta = RELATION_MARGIN * frame_w
    if relation == "left_of":
        return subject.cx + delta < obj.cx
    if relation == "right_of":
        return obj.cx + delta < subject.cx
    if relation == "above":
        return subject.cy + delta < obj.cy
    if relation == "below":
        return obj.cy + delta < subject.cy
    if relation == "next_to":
        return box_gap(subject, obj) <= delta
    if relation == "on":
        return subject.cy + delta / 2 < obj.cy and box_gap(subject, obj) <= delta and horizontal_overlap(subject, obj)
    if relation == "under":
        return obj.cy + delta / 2 < subject.cy and box_gap(subject, obj) <= delta and horizontal_overlap(subject, obj)
    raise ValueError(f"relation {relation!r} has no geometric predicate")


def nearest_color(rgb) -> str:
    """Classify an RGB triple to the nearest table color by squared distance."""
    r, g, b = int(rgb[0]), int(rgb[1]), int(rgb[2])
    best, best_d = "", 1 << 30
    for name, (cr, cg, cb) in COLOR_TABLE.items():
        d = (r - cr) ** 2 + (g - cg) ** 2 + (b - cb) ** 2
        if d < best_d:
            best, best_d = name, d
    return best
