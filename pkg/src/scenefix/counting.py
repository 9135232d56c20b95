"""Bring the number of instances of one object kind up or down to target.

Counting runs before the per-object correction loops because it changes
which objects exist at all. plan_counting decides what to remove or insert;
apply_counting executes the plan and re-detects so surviving and new
instances can be bound to spec ids. Binding order is detection rank
(largest visible area first, ties left to right, then top to bottom)
mapped onto ascending ids.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backends import base as gateway
from .backends.base import BackendSuite
from .backends.types import DetectionBox, EmptyMask, Image, ObjectMask
from .geometry import Box

GeometryMap = dict[str, tuple[Box, ObjectMask]]


@dataclass(frozen=True)
class Removal:
    box: Box
    score: float
    mask: ObjectMask


@dataclass(frozen=True)
class Insertion:
    description: str
    box: Box


@dataclass
class CountingPlan:
    base_name: str
    target_count: int
    ref_ids: tuple[int, ...]
    detected: list[DetectionBox]
    removals: list[Removal] = field(default_factory=list)
    insertions: list[Insertion] = field(default_factory=list)

    @property
    def is_noop(self) -> bool:
        return not self.removals and not self.insertions


@dataclass
class CountingOutcome:
    image: Image
    registry: GeometryMap
    touched_masks: list[ObjectMask]
    report: dict


def segment_or_box(suite: BackendSuite, image: Image, box: Box) -> ObjectMask:
    """Segment inside box; if nothing segments, fall back to the box itself."""
    try:
        return suite.segment(image, box)
    except EmptyMask:
        bits = np.zeros((image.height, image.width), dtype=bool)
        x2 = min(box.x2, image.width)
        y2 = min(box.y2, image.height)
        bits[max(box.y, 0) : y2, max(box.x, 0) : x2] = True
        return ObjectMask(bits)


def plan_counting(
    image: Image,
    base_name: str,
    target_count: int,
    suite: BackendSuite,
    descriptions: list[str] | None = None,
    ref_ids: tuple[int, ...] | None = None,
    obstacles: list[Box] | None = None,
) -> CountingPlan:
    """Decide removals (surplus, lowest-ranked first) or insertions (deficit).

    descriptions, when given, supplies one generation prompt per inserted
    instance; otherwise the bare base name is used. obstacles lists boxes of
    objects outside this base that insertions must also avoid. Raises
    NoFeasiblePlacement when an insertion cannot be placed.
    """
    if target_count < 0:
        raise ValueError(f"target_count must be >= 0, got {target_count}")
    if ref_ids is None:
        ref_ids = tuple(range(1, target_count + 1))

    detected = suite.detect(image, base_name)
    plan = CountingPlan(base_name, target_count, ref_ids, detected)

    if len(detected) > target_count:
        for det in detected[target_count:]:
            plan.removals.append(Removal(det.box, det.score, segment_or_box(suite, image, det.box)))
    elif len(detected) < target_count:
        existing = [det.box for det in detected] + list(obstacles or [])
        for i in range(target_count - len(detected)):
            text = base_name
            if descriptions and i < len(descriptions):
                text = descriptions[i]
            box = suite.propose_box(text, existing, (image.width, image.height))
            existing.append(box)
            plan.insertions.append(Insertion(text, box))
    return plan


def apply_counting(image: Image, plan: CountingPlan, suite: BackendSuite) -> CountingOutcome:
    """Execute a plan, re-detect, and bind detections to spec ids."""
    touched: list[ObjectMask] = []
    for removal in plan.removals:
        image = suite.inpaint_remove(image, removal.mask)
        touched.append(removal.mask)

    for insertion in plan.insertions:
        patch = suite.generate_object(insertion.description, insertion.box)
        bits = np.any(patch.pixels != np.asarray(patch_background(patch), dtype=np.uint8), axis=2)
        image = gateway.paste(image, patch, insertion.box, ObjectMask(bits))
        placed = np.zeros((image.height, image.width), dtype=bool)
        placed[insertion.box.y : insertion.box.y2, insertion.box.x : insertion.box.x2] = bits
        touched.append(ObjectMask(placed))

    final = suite.detect(image, plan.base_name)
    registry: GeometryMap = {}
    for i, det in enumerate(final):
        if i >= len(plan.ref_ids):
            break
        display = f"{plan.base_name}_{plan.ref_ids[i]}"
        registry[display] = (det.box, segment_or_box(suite, image, det.box))

    report = {
        "base_name": plan.base_name,
        "target": plan.target_count,
        "detected_before": len(plan.detected),
        "removed": [[r.box.x, r.box.y, r.box.w, r.box.h] for r in plan.removals],
        "inserted": [[p.box.x, p.box.y, p.box.w, p.box.h] for p in plan.insertions],
        "detected_after": len(final),
        "bound": sorted(registry),
    }
    return CountingOutcome(image, registry, touched, report)


def patch_background(patch: Image) -> tuple[int, int, int]:
    """Background color of a generated patch: from its world annotation when
    present, else the most common corner pixel."""
    if patch.world is not None:
        return patch.world.background
    corners = [
        tuple(int(v) for v in patch.pixels[0, 0]),
        tuple(int(v) for v in patch.pixels[0, -1]),
        tuple(int(v) for v in patch.pixels[-1, 0]),
        tuple(int(v) for v in patch.pixels[-1, -1]),
    ]
    return max(set(corners), key=corners.count)
