"""Merge accepted patches into one frame, then smooth the seams.

Stage one (assemble) is pure pixel surgery: each corrected object is erased
from its original footprint and its accepted content pasted at its final
box, and every touched region is accumulated into a composite mask. Stage
two (refine) runs the frame through the refiner backend: the composite is
inverted to a latent trajectory, stepped steps times from the noisiest
grid, and for the first masked_steps iterations the cells outside the
composite mask are reset to the matching trajectory grid, so smoothing
concentrates where content changed while the rest of the frame drifts as
little as one intensity level.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import base as gateway
from .backends.base import LATENT_BLOCK, BackendSuite
from .backends.types import Image, ObjectMask
from .counting import GeometryMap
from .geometry import Box
from .loop import CORRECTED, SubtaskResult
from .scene import KIND_ATTRIBUTE, KIND_SPATIAL

DEFAULT_STEPS = 40
DEFAULT_K_FRACTION = 0.75


@dataclass(frozen=True)
class CompositeMask:
    """Pixel-level touched-region mask plus its latent-cell pooling."""

    pixel_bits: np.ndarray
    latent_bits: np.ndarray

    @property
    def empty(self) -> bool:
        return not self.pixel_bits.any()


@dataclass(frozen=True)
class RefineConfig:
    steps: int = DEFAULT_STEPS
    k_fraction: float = DEFAULT_K_FRACTION
    mask_from_start: bool = True
    masked_steps_override: int | None = None

    @property
    def masked_steps(self) -> int:
        k = self.masked_steps_override
        if k is None:
            k = round(self.k_fraction * self.steps)
        if not 0 <= k <= self.steps:
            raise ValueError(f"masked steps {k} outside [0, {self.steps}]")
        return k


def latent_bits_for(pixel_bits: np.ndarray) -> np.ndarray:
    """Pool a pixel mask to latent cells: a cell is set when any of its
    pixels is."""
    h, w = pixel_bits.shape
    ch = -(-h // LATENT_BLOCK)
    cw = -(-w // LATENT_BLOCK)
    padded = np.zeros((ch * LATENT_BLOCK, cw * LATENT_BLOCK), dtype=bool)
    padded[:h, :w] = pixel_bits
    return padded.reshape(ch, LATENT_BLOCK, cw, LATENT_BLOCK).any(axis=(1, 3))


def assemble(
    base: Image,
    results: list[SubtaskResult],
    registry: GeometryMap,
    suite: BackendSuite,
    extra_masks: tuple[ObjectMask, ...] = (),
) -> tuple[Image, CompositeMask]:
    """Stage one: apply accepted subtask outcomes to the frame.

    Unmoved attribute patches paste their verified crop back in place; when
    several patches target the same object the last one in subtask order
    supersedes the rest, which is sound because the correction phase chains
    same-object subtasks so each later patch carries the earlier fixes.
    Moves erase the original footprint and paste the object content (edited
    when an attribute patch exists for the same object) at the accepted
    box, scaled to fit. Vacated footprints, pasted content, and the
    counting masks in extra_masks all join the composite mask.
    """
    pixel_bits = np.zeros((base.height, base.width), dtype=bool)
    for extra in extra_masks:
        pixel_bits |= extra.bits

    patches: dict[str, SubtaskResult] = {}
    placements: dict[str, Box] = {}
    region_patches: list[SubtaskResult] = []
    for res in results:
        if res.status != CORRECTED:
            continue
        if res.kind == KIND_ATTRIBUTE and res.patch_image is not None:
            patches[res.target_ref] = res
        elif res.kind == KIND_SPATIAL:
            if res.substituted and res.patch_image is not None:
                region_patches.append(res)
            elif res.placement is not None and res.moved_ref is not None:
                placements[res.moved_ref] = res.placement

    composite = base
    for display in sorted(set(patches) | set(placements)):
        box, mask = registry[display]
        if display in placements:
            # Content is lifted first, then the original footprint is
            # inpainted away, so a placement overlapping the old box cannot
            # be wiped by its own erase.
            src_img, src_bits = _object_content(composite, box, mask, patches.get(display))
            composite = suite.inpaint_remove(composite, mask)
            pixel_bits |= mask.bits
            composite = _paste_fitted(composite, src_img, src_bits, placements[display], pixel_bits)
        else:
            res = patches[display]
            composite = gateway.paste(composite, res.patch_image, res.patch_box)
            pixel_bits |= mask.bits
            placed = np.zeros_like(pixel_bits)
            placed[res.patch_box.y : res.patch_box.y2, res.patch_box.x : res.patch_box.x2] = (
                res.patch_mask.bits
            )
            pixel_bits |= placed

    for res in region_patches:
        composite = gateway.paste(composite, res.patch_image, res.patch_box)
        pixel_bits[res.patch_box.y : res.patch_box.y2, res.patch_box.x : res.patch_box.x2] = True

    return composite, CompositeMask(pixel_bits, latent_bits_for(pixel_bits))


def _object_content(
    composite: Image, box: Box, mask: ObjectMask, patch: SubtaskResult | None
) -> tuple[Image, np.ndarray]:
    """The pixels that represent one object: its accepted attribute patch
    when there is one, else its current content cropped from the frame."""
    if patch is not None:
        tight = patch.patch_mask.bounding_box()
        src_img = gateway.crop(patch.patch_image, tight)
        src_bits = patch.patch_mask.bits[tight.y : tight.y2, tight.x : tight.x2]
    else:
        src_img = gateway.crop(composite, box)
        src_bits = mask.bits[box.y : box.y2, box.x : box.x2]
    return src_img, src_bits


def _paste_fitted(
    composite: Image,
    src_img: Image,
    src_bits: np.ndarray,
    target: Box,
    pixel_bits: np.ndarray,
) -> Image:
    """Masked paste of object content into target, scaled to fit and
    centered, accumulating the pasted region into the composite mask."""
    factor = min(target.w / src_img.width, target.h / src_img.height)
    nw = max(1, round(src_img.width * factor))
    nh = max(1, round(src_img.height * factor))
    if (nw, nh) != (src_img.width, src_img.height):
        src_img = gateway.scale(src_img, nw, nh)
        src_bits = gateway.scale_mask(ObjectMask(src_bits), nw, nh).bits
    place = Box(target.x + (target.w - nw) // 2, target.y + (target.h - nh) // 2, nw, nh)

    composite = gateway.paste(composite, src_img, place, ObjectMask(src_bits))
    placed = np.zeros_like(pixel_bits)
    placed[place.y : place.y2, place.x : place.x2] = src_bits
    pixel_bits |= placed
    return composite


def refine(
    composite: Image,
    mask: CompositeMask,
    config: RefineConfig,
    suite: BackendSuite,
) -> tuple[Image, list[dict]]:
    """Stage two: masked latent smoothing.

    The latent starts from the trajectory's noisiest grid. Every iteration
    steps it once; during the first masked_steps iterations (the last ones
    when mask_from_start is off) cells outside the composite mask are reset
    to the trajectory state after that step, so a fully masked run keeps the
    off-mask cells pinned to the clean encode. Returns the decoded frame and
    a per-step trace of (step, masked)."""
    trajectory = suite.refine_invert(composite, config.steps)
    if len(trajectory.grids) != config.steps + 1:
        raise ValueError(
            f"trajectory has {len(trajectory.grids)} grids for {config.steps} steps"
        )
    keep = mask.latent_bits
    expected = trajectory.grids[0].shape[:2]
    if keep.shape != expected:
        raise ValueError(f"latent mask {keep.shape} does not match grid {expected}")

    k = config.masked_steps
    z = trajectory.grids[0].copy()
    trace: list[dict] = []
    for i in range(config.steps):
        z = suite.refine_step(z, i)
        masked = i < k if config.mask_from_start else i >= config.steps - k
        if masked:
            z = np.where(keep[:, :, None], z, trajectory.grids[i + 1])
        trace.append({"step": i, "masked": bool(masked)})
    decoded = suite.refine_decode(z, trajectory)
    return decoded.with_world(composite.world), trace
