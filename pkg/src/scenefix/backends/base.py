"""Gateway: the one seam every model capability passes through.

Each capability is a small protocol; a BackendSuite bundles one handle per
capability behind per-backend concurrency limits and an observer hook that
feeds transcripts and the run log. Policy that must not depend on backend
quirks lives here: detection ordering, judge verdict parsing, and the local
crop/paste/scale arithmetic (which also propagates mock world annotations).
"""
from __future__ import annotations

import re
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .. import prompts
from ..geometry import Box
from .types import (
    DetectionBox,
    Image,
    ObjectMask,
    UnparseableVerdict,
    crop_pixels,
    paste_pixels,
    scale_nearest,
)
from .world import crop_world, paste_world, scale_world

DEFAULT_PER_BACKEND_CONCURRENCY = 4

# Latent grids are one cell per LATENT_BLOCK x LATENT_BLOCK pixel block,
# three channels, float64. Every refiner implementation honors this layout.
LATENT_BLOCK = 8


# ============================================================================
# Capability protocols
# ============================================================================


@runtime_checkable
class LLMBackend(Protocol):
    def complete(self, prompt: str) -> str: ...


@runtime_checkable
class VLMBackend(Protocol):
    def query(self, image: Image, question: str) -> str: ...


@runtime_checkable
class DetectorBackend(Protocol):
    def detect(self, image: Image, label: str) -> list[DetectionBox]: ...


@runtime_checkable
class SegmenterBackend(Protocol):
    def segment(self, image: Image, box: Box) -> ObjectMask: ...


@runtime_checkable
class InpainterBackend(Protocol):
    def remove(self, image: Image, mask: ObjectMask) -> Image: ...


@runtime_checkable
class EditorBackend(Protocol):
    def edit(self, image: Image, instruction: str, seed: int) -> Image: ...


@runtime_checkable
class LayoutBackend(Protocol):
    def propose_box(self, description: str, existing: list[Box], canvas: tuple[int, int]) -> Box: ...


@runtime_checkable
class ObjectGeneratorBackend(Protocol):
    def generate(self, description: str, box: Box) -> Image: ...


@dataclass(frozen=True)
class LatentTrajectory:
    """Inversion output: steps + 1 latent grids, one per trajectory state.

    grids[0] is the starting (noisiest) latent and grids[i] the state after
    i denoising steps, so grids[steps] is the clean encode; masked smoothing
    anchors off-mask cells to grids[i + 1] after step i. Grids are float64
    (cells_h, cells_w, 3). `residual` carries the full-resolution detail the
    decoder re-applies (mock mode); `handle` names server-side state (remote
    mode).
    """

    steps: int
    grids: tuple[np.ndarray, ...]
    image_w: int
    image_h: int
    residual: np.ndarray | None = None
    handle: str | None = None


@runtime_checkable
class RefinerBackend(Protocol):
    def invert(self, image: Image, steps: int) -> LatentTrajectory: ...

    def step(self, latent: np.ndarray, t: int) -> np.ndarray: ...

    def decode(self, latent: np.ndarray, trajectory: LatentTrajectory) -> Image: ...


# ============================================================================
# Gateway policy helpers
# ============================================================================


def sort_detections(boxes: list[DetectionBox]) -> list[DetectionBox]:
    """Canonical order: score desc, ties by area desc, then x asc, then y asc.

    Applied to every detector's output so ordering quirks cannot leak into
    counting or id binding.
    """
    return sorted(boxes, key=lambda d: (-d.score, -d.box.area, d.box.x, d.box.y))


_VERDICT_RE = re.compile(r"^\W*(yes|no)\b", re.IGNORECASE)


def parse_verdict(text: str) -> bool | None:
    m = _VERDICT_RE.match(text)
    if not m:
        return None
    return m.group(1).lower() == "yes"


# Local raster ops. They run in-process in every mode; in mock mode they also
# keep the scene annotation in step with the pixels.


def crop(image: Image, box: Box) -> Image:
    px = crop_pixels(image.pixels, box)
    world = crop_world(image.world, box) if image.world is not None else None
    return Image(px, world)


def paste(base: Image, patch: Image, box: Box, mask: ObjectMask | None = None) -> Image:
    if (patch.height, patch.width) != (box.h, box.w):
        raise ValueError(f"patch {patch.width}x{patch.height} does not fit box {box.as_tuple()}")
    bits = mask.bits if mask is not None else None
    px = paste_pixels(base.pixels, patch.pixels, box, bits)
    world = None
    if base.world is not None:
        world = paste_world(base.world, patch.world, box, bits)
    return Image(px, world)


def scale(image: Image, new_w: int, new_h: int) -> Image:
    px = scale_nearest(image.pixels, new_w, new_h)
    world = scale_world(image.world, new_w, new_h) if image.world is not None else None
    return Image(px, world)


def scale_mask(mask: ObjectMask, new_w: int, new_h: int) -> ObjectMask:
    return ObjectMask(scale_nearest(mask.bits, new_w, new_h))


# ============================================================================
# Suite
# ============================================================================

Observer = Callable[[dict], None]


@dataclass
class BackendSuite:
    """One handle per capability plus gateway policy.

    Calls acquire a per-backend semaphore (backpressure, default limit 4),
    are timed, and are reported to every observer as a JSON-friendly event.
    """

    llm: LLMBackend
    vlm: VLMBackend
    detector: DetectorBackend
    segmenter: SegmenterBackend
    inpainter: InpainterBackend
    editor: EditorBackend
    layout_generator: LayoutBackend
    object_generator: ObjectGeneratorBackend
    refiner: RefinerBackend
    per_backend_concurrency: int = DEFAULT_PER_BACKEND_CONCURRENCY
    observers: tuple[Observer, ...] = ()
    _sems: dict = field(default_factory=dict, repr=False)

    _KINDS = (
        "llm", "vlm", "detector", "segmenter", "inpainter",
        "editor", "layout_generator", "object_generator", "refiner",
    )

    def __post_init__(self):
        if not self._sems:
            self._sems = {k: threading.Semaphore(self.per_backend_concurrency) for k in self._KINDS}

    def validate(self) -> None:
        """Every handle must resolve before a job starts."""
        for kind in self._KINDS:
            if getattr(self, kind, None) is None:
                raise ValueError(f"backend handle {kind!r} is not configured")

    def with_observer(self, fn: Observer) -> "BackendSuite":
        """Shallow view sharing handles and semaphores, adding one observer."""
        return replace(self, observers=self.observers + (fn,), _sems=self._sems)

    def _run(self, kind: str, op: str, request: dict, fn):
        t0 = time.monotonic()
        with self._sems[kind]:
            result = fn()
        event = {
            "backend": kind,
            "op": op,
            "request": request,
            "seconds": round(time.monotonic() - t0, 6),
        }
        for obs in self.observers:
            obs(event | {"response": _summarize(result)})
        return result

    # -- capability calls ----------------------------------------------------

    def llm_complete(self, prompt: str) -> str:
        return self._run("llm", "complete", {"prompt": prompt}, lambda: self.llm.complete(prompt))

    def llm_judge(self, target: str, answer: str) -> bool:
        """Yes/No entailment judgment. Only a leading Yes/No token counts;
        anything else gets exactly one re-prompt before UnparseableVerdict."""
        prompt = prompts.load("judge").format(target=target, answer=answer)
        reply = self.llm_complete(prompt)
        verdict = parse_verdict(reply)
        if verdict is None:
            reply = self.llm_complete(prompt)
            verdict = parse_verdict(reply)
            if verdict is None:
                raise UnparseableVerdict(f"no leading Yes/No in {reply[:80]!r}")
        return verdict

    def vlm_query(self, image: Image, question: str) -> str:
        return self._run("vlm", "query", {"question": question}, lambda: self.vlm.query(image, question))

    def detect(self, image: Image, label: str) -> list[DetectionBox]:
        boxes = self._run("detector", "detect", {"label": label}, lambda: self.detector.detect(image, label))
        return sort_detections(boxes)

    def segment(self, image: Image, box: Box) -> ObjectMask:
        return self._run("segmenter", "segment", {"box": box.as_tuple()}, lambda: self.segmenter.segment(image, box))

    def inpaint_remove(self, image: Image, mask: ObjectMask) -> Image:
        return self._run(
            "inpainter", "remove", {"pixels": mask.pixel_count}, lambda: self.inpainter.remove(image, mask)
        )

    def edit(self, image: Image, instruction: str, seed: int) -> Image:
        return self._run(
            "editor", "edit", {"instruction": instruction, "seed": seed},
            lambda: self.editor.edit(image, instruction, seed),
        )

    def propose_box(self, description: str, existing: list[Box], canvas: tuple[int, int]) -> Box:
        return self._run(
            "layout_generator", "propose_box",
            {"description": description, "existing": [b.as_tuple() for b in existing], "canvas": list(canvas)},
            lambda: self.layout_generator.propose_box(description, existing, canvas),
        )

    def generate_object(self, description: str, box: Box) -> Image:
        return self._run(
            "object_generator", "generate", {"description": description, "box": box.as_tuple()},
            lambda: self.object_generator.generate(description, box),
        )

    def refine_invert(self, image: Image, steps: int) -> LatentTrajectory:
        return self._run("refiner", "invert", {"steps": steps}, lambda: self.refiner.invert(image, steps))

    def refine_step(self, latent: np.ndarray, t: int) -> np.ndarray:
        return self._run("refiner", "step", {"t": t}, lambda: self.refiner.step(latent, t))

    def refine_decode(self, latent: np.ndarray, trajectory: LatentTrajectory) -> Image:
        return self._run("refiner", "decode", {}, lambda: self.refiner.decode(latent, trajectory))


def _summarize(result) -> object:
    """Events must stay JSON-friendly and small."""
    if isinstance(result, str):
        return result if len(result) <= 400 else result[:400] + "..."
    if isinstance(result, bool):
        return result
    if isinstance(result, Image):
        return {"image": [result.width, result.height]}
    if isinstance(result, ObjectMask):
        return {"mask_pixels": result.pixel_count}
    if isinstance(result, Box):
        return {"box": result.as_tuple()}
    if isinstance(result, LatentTrajectory):
        return {"trajectory_steps": result.steps}
    if isinstance(result, list) and all(isinstance(d, DetectionBox) for d in result):
        return [{"label": d.label, "box": d.box.as_tuple(), "score": round(d.score, 4)} for d in result]
    if isinstance(result, np.ndarray):
        return {"array": list(result.shape)}
    return repr(result)[:200]
