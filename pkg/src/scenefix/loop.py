"""Decision, execution, and verification for a single subtask.

Each constraint gets its own loop. The decision pass asks the VLM about the
current image and has the judge compare the answer with the requirement. A
satisfied constraint exits immediately. Otherwise the executor produces a
candidate (an attribute edit on a padded crop, or a move planned by the
LLM), and the verification pass repeats the decision on the candidate
before it is accepted. Rejected candidates are discarded; the loop retries
with a fresh seed up to max_iterations, then reports failure with the
original content untouched.

An optional review gate parks verified candidates for a human decision:
approve, reject_retry (burns one iteration), or substitute an uploaded
crop, which is itself verified before acceptance.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import prompts
from .backends import base as gateway
from .backends.base import BackendSuite
from .backends.types import (
    BackendError,
    Image,
    NoFeasiblePlacement,
    ObjectMask,
    UnparseableLLMOutput,
)
from .backends.world import CARRY_FRACTION
from .counting import GeometryMap, segment_or_box
from .geometry import BACKGROUND_RGB, Box, pad_box, union_box
from .scene import KIND_ATTRIBUTE, KIND_SPATIAL, Subtask, relation_phrase

DEFAULT_MAX_ITERATIONS = 3
DEFAULT_CROP_PADDING = 0.10

ALREADY_CORRECT = "already_correct"
CORRECTED = "corrected"
FAILED = "failed"

APPROVE = "approve"
REJECT_RETRY = "reject_retry"
SUBSTITUTE = "substitute"


@dataclass(frozen=True)
class LoopConfig:
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    crop_padding: float = DEFAULT_CROP_PADDING
    blank_background: bool = False
    verifier_enabled: bool = True


@dataclass(frozen=True)
class ReviewCandidate:
    """What a reviewer sees for one parked candidate."""

    subtask_id: str
    kind: str
    iteration: int
    remaining_retries: int
    view_box: Box
    before: Image
    candidate: Image
    summary: str
    note: str | None = None


@dataclass(frozen=True)
class ReviewDecision:
    action: str
    image: Image | None = None


ReviewGate = Callable[[ReviewCandidate], ReviewDecision]


@dataclass
class SubtaskResult:
    subtask_id: str
    kind: str
    status: str
    iterations: int
    target_ref: str | None = None
    patch_image: Image | None = None
    patch_mask: ObjectMask | None = None
    patch_box: Box | None = None
    placement: Box | None = None
    moved_ref: str | None = None
    substituted: bool = False
    infeasible: bool = False
    reason: str | None = None
    transcript: list = field(default_factory=list)


def run_loop(
    subtask: Subtask,
    image: Image,
    registry: GeometryMap,
    suite: BackendSuite,
    config: LoopConfig | None = None,
    review_gate: ReviewGate | None = None,
) -> SubtaskResult:
    config = config or LoopConfig()
    if subtask.kind == KIND_ATTRIBUTE:
        return _run_attribute(subtask, image, registry, suite, config, review_gate)
    if subtask.kind == KIND_SPATIAL:
        return _run_spatial(subtask, image, registry, suite, config, review_gate)
    raise ValueError(f"run_loop does not handle subtask kind {subtask.kind!r}")


def _run_attribute(
    subtask: Subtask,
    image: Image,
    registry: GeometryMap,
    suite: BackendSuite,
    config: LoopConfig,
    review_gate: ReviewGate | None,
) -> SubtaskResult:
    con = subtask.attribute
    display = con.object.display
    transcript: list = []
    result = SubtaskResult(subtask.id, subtask.kind, FAILED, 0, target_ref=display, transcript=transcript)
    if display not in registry:
        result.reason = f"no bound geometry for {display}"
        return result
    box, mask = registry[display]
    padded = pad_box(box, config.crop_padding, image.width, image.height)
    local_box = Box(box.x - padded.x, box.y - padded.y, box.w, box.h)

    if _attribute_satisfied(image, con, box, mask, suite, config, transcript):
        result.status = ALREADY_CORRECT
        return result

    instruction = prompts.fill("edit_instruction", 
        base_name=con.object.base_name, attribute=con.attribute
    )
    for i in range(config.max_iterations):
        result.iterations = i + 1
        crop_img = _decision_crop(image, padded, mask, con.object.base_name, config)
        edited = suite.edit(crop_img, instruction, seed=i)
        transcript.append({"phase": "execution", "instruction": instruction, "seed": i})
        candidate_full = gateway.paste(image, edited, padded)

        verified = True
        if config.verifier_enabled:
            verified = _attribute_satisfied(candidate_full, con, box, mask, suite, config, transcript, phase="verification")
        if not verified:
            transcript.append({"phase": "verification", "accepted": False, "iteration": i + 1})
            continue

        accepted_patch = edited
        substituted = False
        if review_gate is not None:
            outcome = _review(
                review_gate,
                suite,
                config,
                transcript,
                candidate=ReviewCandidate(
                    subtask_id=subtask.id,
                    kind=subtask.kind,
                    iteration=i + 1,
                    remaining_retries=config.max_iterations - (i + 1),
                    view_box=padded,
                    before=gateway.crop(image, padded),
                    candidate=edited,
                    summary=instruction,
                ),
                verify=lambda img: _crop_shows_attribute(img, con, suite, transcript),
            )
            if outcome is None:
                continue
            accepted_patch, substituted = outcome
            if accepted_patch is None:
                break

        result.status = CORRECTED
        result.patch_image = accepted_patch
        result.patch_mask = segment_or_box(suite, accepted_patch, local_box)
        result.patch_box = padded
        result.substituted = substituted
        return result

    result.reason = "verification rejected every candidate"
    return result


def _run_spatial(
    subtask: Subtask,
    image: Image,
    registry: GeometryMap,
    suite: BackendSuite,
    config: LoopConfig,
    review_gate: ReviewGate | None,
) -> SubtaskResult:
    con = subtask.spatial
    transcript: list = []
    result = SubtaskResult(
        subtask.id, subtask.kind, FAILED, 0, target_ref=con.subject.display, transcript=transcript
    )
    for display in (con.subject.display, con.object.display):
        if display not in registry:
            result.reason = f"no bound geometry for {display}"
            return result

    if _spatial_satisfied(image, con, registry, suite, config, transcript):
        result.status = ALREADY_CORRECT
        return result

    for i in range(config.max_iterations):
        result.iterations = i + 1
        try:
            mover, new_box = _propose_move(image, con, registry, suite, transcript)
        except UnparseableLLMOutput as exc:
            result.reason = str(exc)
            return result
        except NoFeasiblePlacement as exc:
            result.reason = str(exc)
            result.infeasible = True
            return result
        blocked = _move_collision(new_box, registry, mover)
        if blocked is not None:
            transcript.append(
                {"phase": "verification", "accepted": False, "iteration": i + 1,
                 "note": f"placement would cover {blocked}"}
            )
            continue
        candidate_full, moved_geometry = _apply_move(image, mover, new_box, registry, suite)
        updated = dict(registry)
        updated[mover] = moved_geometry

        verified = True
        if config.verifier_enabled:
            verified = _spatial_satisfied(candidate_full, con, updated, suite, config, transcript, phase="verification")
        if not verified:
            transcript.append({"phase": "verification", "accepted": False, "iteration": i + 1})
            continue

        if review_gate is not None:
            old_box = registry[mover][0]
            other = con.object.display if mover == con.subject.display else con.subject.display
            view = pad_box(
                union_box(union_box(old_box, new_box), registry[other][0]),
                config.crop_padding,
                image.width,
                image.height,
            )
            outcome = _review(
                review_gate,
                suite,
                config,
                transcript,
                candidate=ReviewCandidate(
                    subtask_id=subtask.id,
                    kind=subtask.kind,
                    iteration=i + 1,
                    remaining_retries=config.max_iterations - (i + 1),
                    view_box=view,
                    before=gateway.crop(image, view),
                    candidate=gateway.crop(candidate_full, view),
                    summary=f"move {mover} so it is {relation_phrase(con.relation, con.relation_text)} {con.object.display}",
                ),
                verify=lambda img: _crop_shows_relation(img, con, suite, transcript),
            )
            if outcome is None:
                continue
            accepted, substituted = outcome
            if accepted is None:
                break
            if substituted:
                result.status = CORRECTED
                result.patch_image = accepted
                result.patch_box = view
                result.substituted = True
                return result

        result.status = CORRECTED
        result.placement = new_box
        result.moved_ref = mover
        return result

    if result.reason is None:
        result.reason = "verification rejected every candidate"
    return result


def _review(
    review_gate: ReviewGate,
    suite: BackendSuite,
    config: LoopConfig,
    transcript: list,
    candidate: ReviewCandidate,
    verify: Callable[[Image], bool],
) -> tuple[Image | None, bool] | None:
    """Run the gate until it settles one candidate.

    Returns (accepted_image, substituted) on acceptance, None to retry the
    loop, and (None, False) when the retry budget is gone.
    """
    current = candidate
    while True:
        decision = review_gate(current)
        transcript.append({"phase": "review", "action": decision.action, "iteration": candidate.iteration})
        if decision.action == APPROVE:
            return candidate.candidate, False
        if decision.action == REJECT_RETRY:
            if candidate.remaining_retries <= 0:
                return None, False
            return None
        if decision.action == SUBSTITUTE:
            if decision.image is None:
                current = replace(current, note="substitute decision carried no image")
                continue
            patch = decision.image
            if (patch.height, patch.width) != (candidate.view_box.h, candidate.view_box.w):
                patch = gateway.scale(patch, candidate.view_box.w, candidate.view_box.h)
            if verify(patch):
                return patch, True
            current = replace(current, note="substituted crop failed verification")
            continue
        current = replace(current, note=f"unknown review action {decision.action!r}")


def _decision_crop(
    image: Image, padded: Box, mask: ObjectMask, base_name: str, config: LoopConfig
) -> Image:
    crop_img = gateway.crop(image, padded)
    if not config.blank_background:
        return crop_img
    local = mask.bits[padded.y : padded.y2, padded.x : padded.x2]
    background = BACKGROUND_RGB
    world = crop_img.world
    if world is not None:
        background = world.background
        world = replace(
            world, objects=tuple(o for o in world.objects if o.base_name == base_name)
        )
    pixels = crop_img.pixels.copy()
    pixels[~local] = np.asarray(background, dtype=np.uint8)
    return Image(pixels, world)


def _crop_shows_attribute(crop_img: Image, con, suite: BackendSuite, transcript: list) -> bool:
    """Verify a reviewer-supplied crop on its own pixels. Uploaded crops
    carry no scene annotation, so the question is asked of the crop
    directly rather than of a paste-back."""
    question = prompts.fill("vlm_attribute", 
        category=con.category, base_name=con.object.base_name
    )
    try:
        answer = suite.vlm_query(crop_img, question)
        verdict = suite.llm_judge(con.attribute, answer)
    except BackendError:
        verdict = False
        answer = None
    transcript.append(
        {"phase": "verification", "question": question, "answer": answer, "target": con.attribute, "verdict": verdict}
    )
    return verdict


def _crop_shows_relation(crop_img: Image, con, suite: BackendSuite, transcript: list) -> bool:
    question = prompts.fill("vlm_spatial", 
        subject=con.subject.base_name, object=con.object.base_name
    )
    target = f"the {con.subject.base_name} is {relation_phrase(con.relation, con.relation_text)} the {con.object.base_name}"
    try:
        answer = suite.vlm_query(crop_img, question)
        verdict = suite.llm_judge(target, answer)
    except BackendError:
        verdict = False
        answer = None
    transcript.append(
        {"phase": "verification", "question": question, "answer": answer, "target": target, "verdict": verdict}
    )
    return verdict


def _attribute_satisfied(
    image: Image,
    con,
    box: Box,
    mask: ObjectMask,
    suite: BackendSuite,
    config: LoopConfig,
    transcript: list,
    phase: str = "decision",
) -> bool:
    padded = pad_box(box, config.crop_padding, image.width, image.height)
    crop_img = _decision_crop(image, padded, mask, con.object.base_name, config)
    question = prompts.fill("vlm_attribute", category=con.category, base_name=con.object.base_name)
    answer = suite.vlm_query(crop_img, question)
    verdict = suite.llm_judge(con.attribute, answer)
    transcript.append(
        {"phase": phase, "question": question, "answer": answer, "target": con.attribute, "verdict": verdict}
    )
    return verdict


def _spatial_satisfied(
    image: Image,
    con,
    registry: GeometryMap,
    suite: BackendSuite,
    config: LoopConfig,
    transcript: list,
    phase: str = "decision",
) -> bool:
    # Asked on the full frame: the relation margin scales with frame width,
    # so judging inside a crop would loosen it and pass near-ties that the
    # final image does not satisfy.
    question = prompts.fill("vlm_spatial",
        subject=con.subject.base_name, object=con.object.base_name
    )
    answer = suite.vlm_query(image, question)
    target = f"the {con.subject.base_name} is {relation_phrase(con.relation, con.relation_text)} the {con.object.base_name}"
    verdict = suite.llm_judge(target, answer)
    transcript.append(
        {"phase": phase, "question": question, "answer": answer, "target": target, "verdict": verdict}
    )
    return verdict


def _move_collision(new_box: Box, registry: GeometryMap, mover: str) -> str | None:
    """Display name of the first object the placement would mostly cover.

    Pasting over half an object wipes it from the scene, so such placements
    are rejected before execution rather than discovered as collateral
    damage afterwards. The threshold mirrors the paste carry rule.
    """
    for display, (box, _) in sorted(registry.items()):
        if display == mover:
            continue
        ix = min(new_box.x2, box.x2) - max(new_box.x, box.x)
        iy = min(new_box.y2, box.y2) - max(new_box.y, box.y)
        if ix <= 0 or iy <= 0:
            continue
        if ix * iy >= CARRY_FRACTION * box.w * box.h:
            return display
    return None


def _propose_move(
    image: Image,
    con,
    registry: GeometryMap,
    suite: BackendSuite,
    transcript: list,
) -> tuple[str, Box]:
    """Ask the LLM for a placement fixing the relation. One malformed reply
    earns a single re-prompt, then UnparseableLLMOutput."""
    w, h = image.width, image.height
    subject_box, _ = registry[con.subject.display]
    object_box, _ = registry[con.object.display]
    obstacles = [
        _norm(box, w, h)
        for display, (box, _) in sorted(registry.items())
        if display not in (con.subject.display, con.object.display)
    ]
    prompt = prompts.fill("move",
        subject=con.subject.display,
        object=con.object.display,
        relation_phrase=relation_phrase(con.relation, con.relation_text),
        subject_box=_norm(subject_box, w, h),
        object_box=_norm(object_box, w, h),
        obstacles=obstacles or "none",
    )
    last = ""
    for _ in range(2):
        last = suite.llm_complete(prompt)
        parsed = _parse_move(last, con, w, h)
        if parsed == "infeasible":
            transcript.append({"phase": "execution", "infeasible": True})
            raise NoFeasiblePlacement(
                f"no single move satisfies {con.subject.display} "
                f"{relation_phrase(con.relation, con.relation_text)} {con.object.display}"
            )
        if parsed is not None:
            transcript.append({"phase": "execution", "move": parsed[0], "new_box": parsed[1].as_tuple()})
            return parsed
    raise UnparseableLLMOutput(f"move reply not usable: {last[:200]!r}")


def _norm(box: Box, w: int, h: int) -> list[float]:
    return [round(box.x / w, 4), round(box.y / h, 4), round(box.w / w, 4), round(box.h / h, 4)]


def _parse_move(raw: str, con, w: int, h: int) -> tuple[str, Box] | str | None:
    start = raw.find("{")
    end = raw.rfind("}")
    if start < 0 or end <= start:
        return None
    try:
        data = json.loads(raw[start : end + 1])
    except json.JSONDecodeError:
        return None
    if not isinstance(data, dict):
        return None
    if data.get("infeasible") is True:
        return "infeasible"
    which = str(data.get("move", "subject")).lower()
    if which not in ("subject", "object"):
        return None
    values = data.get("new_box")
    if not isinstance(values, (list, tuple)) or len(values) != 4:
        return None
    try:
        nx, ny, nw, nh = (float(v) for v in values)
    except (TypeError, ValueError):
        return None
    if nw <= 0 or nh <= 0 or nx < -1e-6 or ny < -1e-6 or nx + nw > 1 + 1e-6 or ny + nh > 1 + 1e-6:
        return None
    bw = max(1, round(nw * w))
    bh = max(1, round(nh * h))
    bx = min(max(0, round(nx * w)), w - bw)
    by = min(max(0, round(ny * h)), h - bh)
    mover = con.subject.display if which == "subject" else con.object.display
    return mover, Box(bx, by, bw, bh)


def _apply_move(
    image: Image,
    mover: str,
    new_box: Box,
    registry: GeometryMap,
    suite: BackendSuite,
) -> tuple[Image, tuple[Box, ObjectMask]]:
    old_box, old_mask = registry[mover]
    patch = gateway.crop(image, old_box)
    local_bits = old_mask.bits[old_box.y : old_box.y2, old_box.x : old_box.x2]
    vacated = suite.inpaint_remove(image, old_mask)
    if (new_box.w, new_box.h) != (old_box.w, old_box.h):
        patch = gateway.scale(patch, new_box.w, new_box.h)
        local_bits = (
            gateway.scale_mask(ObjectMask(local_bits), new_box.w, new_box.h).bits
        )
    candidate = gateway.paste(vacated, patch, new_box, ObjectMask(local_bits))
    placed = np.zeros((image.height, image.width), dtype=bool)
    placed[new_box.y : new_box.y2, new_box.x : new_box.x2] = local_bits
    return candidate, (new_box, ObjectMask(placed))
