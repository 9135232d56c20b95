"""Value types crossing the backend boundary, plus PNG wire helpers.

Images are 8-bit RGB rasters held as read-only numpy arrays. In mock mode an
Image may carry a world annotation (the flat-shape scene registry) that the
deterministic backends consult; it never crosses the HTTP wire and remote
backends ignore it.
"""
from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from PIL import Image as PILImage

from ..geometry import Box

if TYPE_CHECKING:  # pragma: no cover
    from .world import WorldState


# ============================================================================
# Errors
# ============================================================================


class BackendError(Exception):
    """Base for everything raised across the gateway."""


class BackendUnavailable(BackendError):
    """Remote endpoint unreachable or persistently failing."""


class EmptyMask(BackendError):
    """Segmentation found nothing inside the requested box."""


class NoFeasiblePlacement(BackendError):
    """No box placement satisfies the overlap bound on this canvas."""


class MalformedLLMOutput(BackendError):
    """LLM output stayed unparseable after all repair attempts."""


class UnparseableVerdict(BackendError):
    """Judge reply had no leading Yes/No even after one re-prompt."""


class UnparseableLLMOutput(BackendError):
    """Structured LLM reply (placement JSON) invalid after one retry."""


class InvalidImage(BackendError):
    """Bytes that do not decode to an RGB raster."""


# ============================================================================
# Image / mask / detection
# ============================================================================


@dataclass(frozen=True, slots=True)
class Image:
    """Immutable RGB raster; (h, w, 3) uint8, row-major."""

    pixels: np.ndarray
    world: "WorldState | None" = None

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise InvalidImage(f"expected (h, w, 3) uint8, got {px.shape} {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidImage("image has no pixels")
        px.setflags(write=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def with_world(self, world: "WorldState | None") -> "Image":
        return Image(self.pixels, world)


@dataclass(frozen=True, slots=True)
class ObjectMask:
    """Boolean raster with the same dims as its source image."""

    bits: np.ndarray

    def __post_init__(self):
        if self.bits.ndim != 2 or self.bits.dtype != np.bool_:
            raise ValueError(f"mask must be a 2d bool array, got {self.bits.shape} {self.bits.dtype}")
        self.bits.setflags(write=False)

    @property
    def pixel_count(self) -> int:
        return int(self.bits.sum())

    def bounding_box(self) -> Box | None:
        ys, xs = np.nonzero(self.bits)
        if len(xs) == 0:
            return None
        return Box(int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


@dataclass(frozen=True, slots=True)
class DetectionBox:
    """One detector hit. Score is the backend's confidence in [0, 1]."""

    label: str
    box: Box
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


def blank_image(width: int, height: int, rgb: tuple[int, int, int], world: "WorldState | None" = None) -> Image:
    px = np.empty((height, width, 3), dtype=np.uint8)
    px[:, :] = rgb
    return Image(px, world)


# ============================================================================
# PNG wire format
# ============================================================================


def encode_png(image: Image) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(image.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> Image:
    try:
        pil = PILImage.open(io.BytesIO(data))
        pil = pil.convert("RGB")
    except Exception as exc:
        raise InvalidImage(f"png decode failed: {exc}") from exc
    return Image(np.asarray(pil, dtype=np.uint8).copy())


def encode_mask_png(mask: ObjectMask) -> bytes:
    raster = np.where(mask.bits, 255, 0).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(raster, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_mask_png(data: bytes) -> ObjectMask:
    try:
        pil = PILImage.open(io.BytesIO(data)).convert("L")
    except Exception as exc:
        raise InvalidImage(f"mask png decode failed: {exc}") from exc
    return ObjectMask(np.asarray(pil, dtype=np.uint8) >= 128)


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def image_hash(image: Image) -> str:
    """Hash of the raw pixel buffer plus dims; stable and cheaper than PNG."""
    h = hashlib.sha256()
    h.update(f"{image.width}x{image.height}:".encode())
    h.update(image.pixels.tobytes())
    return h.hexdigest()


# ============================================================================
# Raw raster arithmetic (world-agnostic; the gateway ops wrap these)
# ============================================================================


def crop_pixels(pixels: np.ndarray, box: Box) -> np.ndarray:
    return pixels[box.y : box.y2, box.x : box.x2].copy()


def paste_pixels(base: np.ndarray, patch: np.ndarray, box: Box, mask_bits: np.ndarray | None) -> np.ndarray:
    out = base.copy()
    region = out[box.y : box.y2, box.x : box.x2]
    if mask_bits is None:
        region[:, :] = patch
    else:
        region[mask_bits] = patch[mask_bits]
    return out


def scale_nearest(pixels: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    ys = (np.arange(new_h) * (h / new_h)).astype(int).clip(0, h - 1)
    xs = (np.arange(new_w) * (w / new_w)).astype(int).clip(0, w - 1)
    return pixels[np.ix_(ys, xs)].copy() if pixels.ndim == 2 else pixels[ys][:, xs].copy()
