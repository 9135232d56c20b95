"""Flat-shape world: the deterministic scene ground truth behind mock mode.

A world is a background color, a frame size, and an ordered tuple of shape
objects (rectangles and ellipses from a fixed 12-color table, optionally
striped). Rendering a world gives pixels; the world rides along on the Image
value so mock backends can answer questions about any image the pipeline
derives from it. Crop and paste propagate the annotation: an object follows
its pixels, and an object at least half covered by an operation is considered
moved or destroyed by it.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from ..geometry import (
    BACKGROUND_RGB,
    COLOR_TABLE,
    STRIPE_ON,
    STRIPE_PERIOD,
    STRIPE_SECONDARY,
    Box,
)
from .types import Image, ObjectMask

SHAPE_KINDS = ("rectangle", "ellipse")

# Fraction of an object's pixels that must fall inside a region for crop to
# carry it along (and for paste over that region to displace it).
CARRY_FRACTION = 0.5


def shape_for_noun(noun: str) -> str:
    """Stable noun -> shape kind assignment for the flat-shape world."""
    digest = hashlib.sha256(noun.strip().lower().encode()).digest()
    return SHAPE_KINDS[digest[0] % len(SHAPE_KINDS)]


@dataclass(frozen=True, slots=True)
class WorldObject:
    """One flat shape. Texture is "solid" or "striped"."""

    base_name: str
    shape: str
    color: str
    box: Box
    texture: str = "solid"

    def __post_init__(self):
        if self.shape not in SHAPE_KINDS:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.color not in COLOR_TABLE:
            raise ValueError(f"color {self.color!r} not in the flat color table")
        if self.texture not in ("solid", "striped"):
            raise ValueError(f"unknown texture {self.texture!r}")


@dataclass(frozen=True, slots=True)
class WorldState:
    """Scene registry: frame dims, background, objects in z-order."""

    frame_w: int
    frame_h: int
    objects: tuple[WorldObject, ...]
    background: tuple[int, int, int] = BACKGROUND_RGB


# ============================================================================
# Rasterization and rendering
# ============================================================================


def object_raster(obj: WorldObject, height: int, width: int) -> np.ndarray:
    """Boolean raster of the shape on an (height, width) canvas."""
    bits = np.zeros((height, width), dtype=bool)
    b = obj.box
    x0, y0 = max(b.x, 0), max(b.y, 0)
    x1, y1 = min(b.x2, width), min(b.y2, height)
    if x1 <= x0 or y1 <= y0:
        return bits
    if obj.shape == "rectangle":
        bits[y0:y1, x0:x1] = True
        return bits
    # Ellipse inscribed in the box: ((x-cx)/a)^2 + ((y-cy)/b)^2 <= 1 over
    # pixel centers.
    cy, cx = b.y + b.h / 2.0, b.x + b.w / 2.0
    ry, rx = b.h / 2.0, b.w / 2.0
    ys = np.arange(y0, y1) + 0.5
    xs = np.arange(x0, x1) + 0.5
    dy = ((ys - cy) / ry)[:, None] ** 2
    dx = ((xs - cx) / rx)[None, :] ** 2
    bits[y0:y1, x0:x1] = dy + dx <= 1.0
    return bits


def paint_object(pixels: np.ndarray, obj: WorldObject) -> None:
    """Draw the object in place. Stripes run vertically, phase-locked to the
    frame origin so edits and re-renders agree pixel for pixel."""
    raster = object_raster(obj, pixels.shape[0], pixels.shape[1])
    rgb = COLOR_TABLE[obj.color]
    if obj.texture == "solid":
        pixels[raster] = rgb
        return
    xs = np.arange(pixels.shape[1])
    on = (xs % STRIPE_PERIOD) < STRIPE_ON
    stripe_cols = np.where(on[None, :], 0, 1)
    palette = np.array([rgb, STRIPE_SECONDARY], dtype=np.uint8)
    colored = palette[stripe_cols.repeat(pixels.shape[0], axis=0).reshape(pixels.shape[0], pixels.shape[1])]
    pixels[raster] = colored[raster]


def render(world: WorldState) -> Image:
    """Render the registry to an annotated image (objects in z-order)."""
    px = np.empty((world.frame_h, world.frame_w, 3), dtype=np.uint8)
    px[:, :] = world.background
    for obj in world.objects:
        paint_object(px, obj)
    return Image(px, world)


def visible_area(obj: WorldObject, world: WorldState) -> int:
    return int(object_raster(obj, world.frame_h, world.frame_w).sum())


def object_mask(obj: WorldObject, world: WorldState) -> ObjectMask:
    return ObjectMask(object_raster(obj, world.frame_h, world.frame_w))


# ============================================================================
# Annotation propagation for crop / paste / scale
# ============================================================================


def _coverage(obj: WorldObject, world: WorldState, region_bits: np.ndarray) -> float:
    raster = object_raster(obj, world.frame_h, world.frame_w)
    total = int(raster.sum())
    if total == 0:
        return 0.0
    return int((raster & region_bits).sum()) / total


def crop_world(world: WorldState, box: Box) -> WorldState:
    """Registry for a crop: objects mostly inside the box, translated."""
    region = np.zeros((world.frame_h, world.frame_w), dtype=bool)
    region[box.y : box.y2, box.x : box.x2] = True
    kept = tuple(
        replace(obj, box=obj.box.translated(-box.x, -box.y))
        for obj in world.objects
        if _coverage(obj, world, region) >= CARRY_FRACTION
    )
    return WorldState(box.w, box.h, kept, world.background)


def paste_world(
    base: WorldState,
    patch: WorldState | None,
    box: Box,
    mask_bits: np.ndarray | None,
) -> WorldState:
    """Registry after pasting patch pixels into base at box.

    Base objects mostly covered by the pasted pixels are displaced; patch
    objects arrive translated. A world-less patch only displaces.
    """
    covered = np.zeros((base.frame_h, base.frame_w), dtype=bool)
    if mask_bits is None:
        covered[box.y : box.y2, box.x : box.x2] = True
    else:
        covered[box.y : box.y2, box.x : box.x2] = mask_bits
    survivors = tuple(obj for obj in base.objects if _coverage(obj, base, covered) < CARRY_FRACTION)
    arrivals: tuple[WorldObject, ...] = ()
    if patch is not None:
        arrivals = tuple(replace(obj, box=obj.box.translated(box.x, box.y)) for obj in patch.objects)
    return WorldState(base.frame_w, base.frame_h, survivors + arrivals, base.background)


def scale_world(world: WorldState, new_w: int, new_h: int) -> WorldState:
    sx, sy = new_w / world.frame_w, new_h / world.frame_h
    scaled = tuple(
        replace(
            obj,
            box=Box(
                int(round(obj.box.x * sx)),
                int(round(obj.box.y * sy)),
                max(1, int(round(obj.box.w * sx))),
                max(1, int(round(obj.box.h * sy))),
            ),
        )
        for obj in world.objects
    )
    return WorldState(new_w, new_h, scaled, world.background)


def erase_world(world: WorldState, mask_bits: np.ndarray) -> WorldState:
    """Registry after inpainting the masked pixels to background."""
    survivors = tuple(obj for obj in world.objects if _coverage(obj, world, mask_bits) < CARRY_FRACTION)
    return WorldState(world.frame_w, world.frame_h, survivors, world.background)


# ============================================================================
# Serialization (artifact sidecars, scene files)
# ============================================================================


def world_to_json(world: WorldState) -> dict:
    return {
        "frame": [world.frame_w, world.frame_h],
        "background": list(world.background),
        "objects": [
            {
                "base_name": o.base_name,
                "shape": o.shape,
                "color": o.color,
                "texture": o.texture,
                "box": list(o.box.as_tuple()),
            }
            for o in world.objects
        ],
    }


def world_from_json(data: dict) -> WorldState:
    objs = tuple(
        WorldObject(
            base_name=str(o["base_name"]),
            shape=str(o["shape"]),
            color=str(o["color"]),
            texture=str(o.get("texture", "solid")),
            box=Box(*[int(v) for v in o["box"]]),
        )
        for o in data.get("objects", [])
    )
    bg = tuple(int(v) for v in data.get("background", BACKGROUND_RGB))
    w, h = (int(v) for v in data["frame"])
    return WorldState(w, h, objs, bg)  # type: ignore[arg-type]
