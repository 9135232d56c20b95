"""Deterministic flat-shape backends for development and testing.

One FlatShapeMock instance implements every capability protocol. Answers come
from the world annotation riding on each Image (with a pixel-classification
fallback for attribute questions on bare rasters), so the whole suite is a
pure function of (scene registry, noise seed). Noise knobs reproduce the
failure modes of real models: answer corruption, edit failure, call latency.

The description grammar lives here too: describe_spec writes the English a
generated scene is described with, and the mock LLM parses exactly that
grammar back, so decomposition has a closed-loop oracle.
"""
from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, replace

import numpy as np

from ..geometry import (
    BACKGROUND_RGB,
    COLOR_NAMES,
    RELATION_MARGIN,
    STRIPE_SECONDARY,
    Box,
    iou,
    nearest_color,
    relation_holds,
)
from ..scene import relation_phrase
from .base import BackendSuite, LatentTrajectory
from .types import (
    BackendError,
    DetectionBox,
    EmptyMask,
    Image,
    NoFeasiblePlacement,
    ObjectMask,
)
from .world import (
    WorldObject,
    WorldState,
    erase_world,
    object_raster,
    paint_object,
    shape_for_noun,
    visible_area,
)

from .base import LATENT_BLOCK

SEGMENT_DILATION = 2
PLACEMENT_IOU_MAX = 0.3
GENERATED_FILL = 0.8

SHAPE_WORDS = {
    "rectangular": "rectangle",
    "square": "rectangle",
    "round": "ellipse",
    "elliptical": "ellipse",
    "oval": "ellipse",
}
SHAPE_ANSWER = {"rectangle": "rectangular", "ellipse": "round"}
TEXTURE_WORDS = ("striped", "solid")

_COUNT_WORDS = {
    "a": 1, "an": 1, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9,
}
_COUNT_NAMES = {v: k for k, v in _COUNT_WORDS.items() if k not in ("a", "an")}


@dataclass(frozen=True)
class MockConfig:
    """Noise knobs. Zero everywhere gives the oracle suite."""

    eps_vlm: float = 0.0
    eps_edit: float = 0.0
    latency: float = 0.0
    seed: int = 0


def _unit_draw(key: str) -> float:
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "big") / float(1 << 64)


# ============================================================================
# Description grammar (generator and its inverse)
# ============================================================================


def _plural(noun: str) -> str:
    if re.search(r"(s|x|z|ch|sh)$", noun):
        return noun + "es"
    return noun + "s"


def _singular(word: str) -> str:
    if word.endswith("es") and re.search(r"(s|x|z|ch|sh)$", word[:-2]):
        return word[:-2]
    if word.endswith("s"):
        return word[:-1]
    return word


def _article(word: str) -> str:
    return "an" if word[:1] in "aeiou" else "a"


def describe_spec(spec) -> str:
    """English rendering of a SceneSpec, invertible by the mock LLM.

    Instances of one noun share a group phrase, so specs passed here should
    keep attributes uniform within a group (the suite generator does).
    """
    groups: dict[str, list] = {}
    order: list[str] = []
    for ref in spec.objects:
        if ref.base_name not in groups:
            groups[ref.base_name] = []
            order.append(ref.base_name)
        groups[ref.base_name].append(ref)

    phrases = []
    for base in order:
        refs = groups[base]
        attrs = {c.category: c.attribute for c in spec.attributes if c.object == refs[0]}
        words = []
        for category in ("shape", "color", "texture"):
            if category in attrs:
                words.append(attrs[category])
        noun = base if len(refs) == 1 else _plural(base)
        adjectives = (" ".join(words) + " ") if words else ""
        if len(refs) == 1:
            head = _article(words[0] if words else base)
        else:
            head = _COUNT_NAMES.get(len(refs), str(len(refs)))
        phrases.append(f"{head} {adjectives}{noun}")

    if len(phrases) > 1:
        body = ", ".join(phrases[:-1]) + " and " + phrases[-1]
    else:
        body = phrases[0]

    clauses = [body]
    for con in spec.spatials:
        phrase = relation_phrase(con.relation) if con.relation != "other" else con.relation_text
        clauses.append(f"the {con.subject.base_name} is {phrase} the {con.object.base_name}")
    return "; ".join(clauses) + "."


def parse_description(text: str) -> dict:
    """Inverse of describe_spec; returns decomposition JSON (dict form)."""
    text = text.strip().rstrip(".")
    parts = [p.strip() for p in text.split(";") if p.strip()]
    if not parts:
        raise ValueError("empty description")

    objects: list[dict] = []
    attributes: list[dict] = []
    group_refs: dict[str, list[dict]] = {}
    next_id = 1

    for phrase in re.split(r",\s*|\s+and\s+", parts[0]):
        words = phrase.strip().split()
        if not words:
            continue
        head = words[0].lower()
        if head in _COUNT_WORDS:
            count = _COUNT_WORDS[head]
            words = words[1:]
        elif head.isdigit():
            count = int(head)
            words = words[1:]
        else:
            count = 1
        attrs: list[tuple[str, str]] = []
        noun_words = []
        for w in words:
            lw = w.lower()
            if lw in COLOR_NAMES:
                attrs.append(("color", lw))
            elif lw in TEXTURE_WORDS:
                attrs.append(("texture", lw))
            elif lw in SHAPE_WORDS:
                attrs.append(("shape", lw))
            else:
                noun_words.append(lw)
        if not noun_words:
            raise ValueError(f"no noun in {phrase!r}")
        noun = " ".join(noun_words)
        if count > 1:
            noun = " ".join(noun_words[:-1] + [_singular(noun_words[-1])])
        refs = []
        for _ in range(count):
            ref = {"base_name": noun, "id": next_id}
            next_id += 1
            objects.append(ref)
            refs.append(ref)
            for category, value in attrs:
                attributes.append({"object": ref, "category": category, "attribute": value})
        group_refs.setdefault(noun, []).extend(refs)

    spatials: list[dict] = []
    for clause in parts[1:]:
        # Greedy middle so the final "the" is the object article, not one
        # inside the relation phrase ("to the left of").
        m = re.match(r"^the\s+(.+?)\s+is\s+(.+)\s+the\s+(.+)$", clause.strip(), re.IGNORECASE)
        if not m:
            raise ValueError(f"unparseable relation clause {clause!r}")
        a_noun, phrase, b_noun = m.group(1).lower(), m.group(2).strip(), m.group(3).lower()
        if a_noun not in group_refs or b_noun not in group_refs:
            raise ValueError(f"relation mentions unknown noun in {clause!r}")
        spatials.append(
            {
                "subject": group_refs[a_noun][0],
                "relation": phrase,
                "object": group_refs[b_noun][0],
            }
        )
    return {"objects": objects, "attributes": attributes, "spatials": spatials}


# ============================================================================
# The mock suite
# ============================================================================


class FlatShapeMock:
    """Every backend capability, answered from flat-shape ground truth."""

    def __init__(self, config: MockConfig | None = None):
        self.config = config or MockConfig()
        self._lock = threading.Lock()
        self._vlm_calls = 0
        self.call_counts: dict[str, int] = {}

    # -- shared plumbing -----------------------------------------------------

    def _tick(self, op: str) -> None:
        with self._lock:
            self.call_counts[op] = self.call_counts.get(op, 0) + 1
        if self.config.latency > 0:
            time.sleep(self.config.latency)

    def _vlm_draw(self) -> float:
        with self._lock:
            self._vlm_calls += 1
            n = self._vlm_calls
        return _unit_draw(f"vlm:{self.config.seed}:{n}")

    @staticmethod
    def _world_of(image: Image) -> WorldState | None:
        return image.world

    @staticmethod
    def _background_of(image: Image) -> tuple[int, int, int]:
        if image.world is not None:
            return image.world.background
        px = image.pixels
        corners = [tuple(px[0, 0]), tuple(px[0, -1]), tuple(px[-1, 0]), tuple(px[-1, -1])]
        return max(set(corners), key=corners.count)

    def _entries_for(self, world: WorldState, label: str) -> list[WorldObject]:
        want = label.strip().lower()
        return [o for o in world.objects if o.base_name.strip().lower() == want]

    def _dominant(self, world: WorldState, label: str) -> WorldObject | None:
        entries = self._entries_for(world, label)
        if not entries:
            return None
        return max(entries, key=lambda o: visible_area(o, world))

    # -- detector ------------------------------------------------------------

    def detect(self, image: Image, label: str) -> list[DetectionBox]:
        self._tick("detect")
        world = self._world_of(image)
        if world is None:
            raise BackendError("mock detector needs a scene annotation")
        entries = self._entries_for(world, label)
        ranked = sorted(
            entries,
            key=lambda o: (-visible_area(o, world), o.box.x, o.box.y),
        )
        out = []
        for rank, obj in enumerate(ranked):
            score = max(0.0, 1.0 - 0.01 * rank)
            b = obj.box
            x0, y0 = max(0, b.x), max(0, b.y)
            x2, y2 = min(world.frame_w, b.x2), min(world.frame_h, b.y2)
            out.append(DetectionBox(label, Box(x0, y0, max(1, x2 - x0), max(1, y2 - y0)), score))
        return out

    # -- segmenter -----------------------------------------------------------

    def segment(self, image: Image, box: Box) -> ObjectMask:
        self._tick("segment")
        h, w = image.height, image.width
        region = np.zeros((h, w), dtype=bool)
        x0 = max(0, box.x - SEGMENT_DILATION)
        y0 = max(0, box.y - SEGMENT_DILATION)
        x2 = min(w, box.x2 + SEGMENT_DILATION)
        y2 = min(h, box.y2 + SEGMENT_DILATION)
        region[y0:y2, x0:x2] = True

        world = self._world_of(image)
        if world is not None:
            best, best_inter = None, 0
            for obj in world.objects:
                inter = int((object_raster(obj, h, w) & region).sum())
                if inter > best_inter:
                    best, best_inter = obj, inter
            if best is None:
                raise EmptyMask(f"nothing registered inside {box.as_tuple()}")
            bits = object_raster(best, h, w) & region
            return ObjectMask(bits)

        bg = np.array(self._background_of(image), dtype=np.uint8)
        non_bg = np.any(image.pixels != bg[None, None, :], axis=2) & region
        if not non_bg.any():
            raise EmptyMask(f"no foreground pixels inside {box.as_tuple()}")
        return ObjectMask(non_bg)

    # -- inpainter -----------------------------------------------------------

    def remove(self, image: Image, mask: ObjectMask) -> Image:
        self._tick("inpaint")
        if mask.bits.shape != (image.height, image.width):
            raise BackendError("mask dims do not match image")
        px = image.pixels.copy()
        px[mask.bits] = self._background_of(image)
        world = self._world_of(image)
        new_world = erase_world(world, mask.bits) if world is not None else None
        return Image(px, new_world)

    # -- vlm -----------------------------------------------------------------

    _ATTR_Q = re.compile(r"what is the (color|texture|shape) of the (.+?)\?", re.IGNORECASE)
    _SPATIAL_Q = re.compile(r"where is the (.+?) relative to the (.+?)\?", re.IGNORECASE)

    def query(self, image: Image, question: str) -> str:
        self._tick("vlm")
        m = self._ATTR_Q.search(question)
        if m:
            return self._answer_attribute(image, m.group(1).lower(), m.group(2).strip())
        m = self._SPATIAL_Q.search(question)
        if m:
            return self._answer_spatial(image, m.group(1).strip(), m.group(2).strip())
        return "I cannot tell."

    def _corrupt(self) -> bool:
        return self.config.eps_vlm > 0 and self._vlm_draw() < self.config.eps_vlm

    def _answer_attribute(self, image: Image, category: str, base: str) -> str:
        world = self._world_of(image)
        if world is not None:
            obj = self._dominant(world, base)
            if obj is None:
                return f"There is no {base}."
            color, texture, shape = obj.color, obj.texture, obj.shape
        else:
            color, texture, shape = self._classify_pixels(image)
        if category == "color":
            value = color
            if self._corrupt():
                value = COLOR_NAMES[(COLOR_NAMES.index(color) + 1) % len(COLOR_NAMES)]
            return f"The {base} is {value}."
        if category == "texture":
            value = texture
            if self._corrupt():
                value = "solid" if texture == "striped" else "striped"
            return f"The {base} looks {value}."
        value = SHAPE_ANSWER[shape]
        if self._corrupt():
            value = "round" if value == "rectangular" else "rectangular"
        return f"The {base} is {value}."

    def _classify_pixels(self, image: Image) -> tuple[str, str, str]:
        """Fallback for bare rasters: treat all foreground as one object."""
        bg = np.array(self._background_of(image), dtype=np.uint8)
        fg = np.any(image.pixels != bg[None, None, :], axis=2)
        if not fg.any():
            return "white", "solid", "rectangle"
        pix = image.pixels[fg]
        stripe = np.array(STRIPE_SECONDARY, dtype=np.uint8)
        stripe_frac = float(np.all(pix == stripe[None, :], axis=1).mean())
        body = pix[~np.all(pix == stripe[None, :], axis=1)] if stripe_frac > 0 else pix
        avg = body.mean(axis=0) if len(body) else pix.mean(axis=0)
        color = nearest_color(avg)
        texture = "striped" if stripe_frac >= 0.15 else "solid"
        ys, xs = np.nonzero(fg)
        bbox_area = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
        shape = "rectangle" if fg.sum() / bbox_area >= 0.88 else "ellipse"
        return color, texture, shape

    def _answer_spatial(self, image: Image, a_base: str, b_base: str) -> str:
        world = self._world_of(image)
        if world is None:
            raise BackendError("mock vlm needs a scene annotation for spatial questions")
        a = self._dominant(world, a_base)
        b = self._dominant(world, b_base)
        if a is None or b is None:
            missing = a_base if a is None else b_base
            return f"There is no {missing}."
        holding = [
            rel
            for rel in ("left_of", "right_of", "above", "below", "on", "under", "next_to")
            if relation_holds(rel, a.box, b.box, world.frame_w, world.frame_h)
        ]
        if self._corrupt():
            holding = [_OPPOSITE.get(r, "next_to") for r in holding] or ["next_to"]
        if not holding:
            return f"The {a_base} shares its position with the {b_base}."
        phrases = [relation_phrase(r) for r in holding]
        tail = "".join(f" and {p} the {b_base}" for p in phrases[1:])
        return f"The {a_base} is {phrases[0]} the {b_base}{tail}."

    # -- editor --------------------------------------------------------------

    _EDIT_RE = re.compile(r"^make the (.+?) (\S+?)\.?$", re.IGNORECASE)

    def edit(self, image: Image, instruction: str, seed: int) -> Image:
        self._tick("edit")
        m = self._EDIT_RE.match(instruction.strip())
        if not m:
            raise BackendError(f"mock editor cannot parse {instruction!r}")
        base, value = m.group(1).strip(), m.group(2).lower()

        # Keyed on the crop content too, so two instances of the same base
        # (identical instructions) fail independently of one another.
        fingerprint = int(image.pixels.sum())
        draw = _unit_draw(f"edit:{self.config.seed}:{instruction}:{seed}:{fingerprint}")
        if self.config.eps_edit > 0 and draw < self.config.eps_edit:
            return Image(image.pixels.copy(), image.world)  # the model "failed"

        world = self._world_of(image)
        if world is None:
            raise BackendError("mock editor needs a scene annotation")
        obj = self._dominant(world, base)
        if obj is None:
            return Image(image.pixels.copy(), world)

        if value in COLOR_NAMES:
            updated = replace(obj, color=value)
        elif value in TEXTURE_WORDS:
            updated = replace(obj, texture=value)
        elif value in SHAPE_WORDS:
            updated = replace(obj, shape=SHAPE_WORDS[value])
        else:
            return Image(image.pixels.copy(), world)

        px = image.pixels.copy()
        old_raster = object_raster(obj, image.height, image.width)
        px[old_raster] = world.background
        paint_object(px, updated)
        objects = tuple(updated if o is obj else o for o in world.objects)
        return Image(px, WorldState(world.frame_w, world.frame_h, objects, world.background))

    # -- layout generator ----------------------------------------------------

    def propose_box(self, description: str, existing: list[Box], canvas: tuple[int, int]) -> Box:
        self._tick("propose_box")
        cw, ch = canvas
        if existing:
            pref_w = int(round(sum(b.w for b in existing) / len(existing)))
            pref_h = int(round(sum(b.h for b in existing) / len(existing)))
        else:
            pref_w, pref_h = max(8, cw // 5), max(8, ch // 5)

        for shrink in (1.0, 0.8, 0.64, 0.5, 0.4):
            w = max(8, int(round(pref_w * shrink)))
            h = max(8, int(round(pref_h * shrink)))
            if w > cw or h > ch:
                continue
            step_x = max(1, w // 2)
            step_y = max(1, h // 2)
            best: tuple[float, int, int] | None = None
            for y in range(0, ch - h + 1, step_y):
                for x in range(0, cw - w + 1, step_x):
                    cand = Box(x, y, w, h)
                    if any(iou(cand, b) >= PLACEMENT_IOU_MAX for b in existing):
                        continue
                    clearance = min((_gap(cand, b) for b in existing), default=float(cw + ch))
                    # largest free cell first; scan order breaks ties
                    if best is None or clearance > best[0]:
                        best = (clearance, x, y)
            if best is not None:
                return Box(best[1], best[2], w, h)
        raise NoFeasiblePlacement(f"no room for {description!r} on {cw}x{ch}")

    # -- object generator ----------------------------------------------------

    def generate(self, description: str, box: Box) -> Image:
        self._tick("generate")
        color, texture, shape_word, noun = _parse_object_description(description)
        shape = SHAPE_WORDS.get(shape_word, None) if shape_word else None
        if shape is None:
            shape = shape_for_noun(noun)
        w80 = max(1, int(round(box.w * GENERATED_FILL)))
        h80 = max(1, int(round(box.h * GENERATED_FILL)))
        inner = Box((box.w - w80) // 2, (box.h - h80) // 2, w80, h80)
        obj = WorldObject(noun, shape, color or "gray", inner, texture or "solid")
        world = WorldState(box.w, box.h, (obj,), BACKGROUND_RGB)
        px = np.empty((box.h, box.w, 3), dtype=np.uint8)
        px[:, :] = BACKGROUND_RGB
        paint_object(px, obj)
        return Image(px, world)

    # -- llm -----------------------------------------------------------------

    def complete(self, prompt: str) -> str:
        self._tick("llm")
        if "Decide whether the observation satisfies the requirement." in prompt:
            return self._judge(prompt)
        if "scene analyst" in prompt:
            return self._decompose(prompt)
        if "Two objects sit on a unit canvas" in prompt:
            return self._propose_move(prompt)
        return ""

    def _judge(self, prompt: str) -> str:
        target = _line_after(prompt, "Requirement:")
        answer = _line_after(prompt, "Observation:")
        return "Yes" if judge_entailment(target, answer) else "No"

    def _decompose(self, prompt: str) -> str:
        description = _line_after(prompt, "Description:")
        try:
            parsed = parse_description(description)
        except ValueError as exc:
            return f"I could not parse that description: {exc}"
        return json.dumps(parsed)

    def _propose_move(self, prompt: str) -> str:
        subject_box = _parse_box_line(prompt, "Subject (")
        object_box = _parse_box_line(prompt, "Object (")
        # Greedy so phrases with embedded articles ("to the right of") are
        # kept whole; the trailing "the" is the object's article.
        m = re.search(r"must be (.+) the", prompt)
        phrase = m.group(1).strip() if m else "next to"
        obstacles = _parse_obstacle_line(prompt, "Keep clear of:")
        which, new_box = _plan_move(phrase, subject_box, object_box, obstacles)
        if which == "infeasible":
            return json.dumps({"infeasible": True})
        return json.dumps({"move": which, "new_box": [round(v, 4) for v in new_box]})

    # -- refiner -------------------------------------------------------------

    def invert(self, image: Image, steps: int) -> LatentTrajectory:
        self._tick("refine_invert")
        grid = _downsample_latent(image.pixels)
        up = _upsample_latent(grid, image.height, image.width)
        residual = image.pixels.astype(np.float64) - up
        return LatentTrajectory(
            steps=steps,
            grids=tuple(grid for _ in range(steps + 1)),
            image_w=image.width,
            image_h=image.height,
            residual=residual,
        )

    # A clean latent should barely move under further denoising; the tiny
    # pull toward the neighborhood mean is what the masked-fraction sweep
    # measures as off-mask drift.
    STEP_RATE = 0.002

    def step(self, latent: np.ndarray, t: int) -> np.ndarray:
        self._tick("refine_step")
        return latent + self.STEP_RATE * (_box3_mean(latent) - latent)

    def decode(self, latent: np.ndarray, trajectory: LatentTrajectory) -> Image:
        self._tick("refine_decode")
        up = _upsample_latent(latent, trajectory.image_h, trajectory.image_w)
        if trajectory.residual is not None:
            up = up + trajectory.residual
        return Image(np.clip(np.rint(up), 0, 255).astype(np.uint8))


# ============================================================================
# Helpers shared with tests
# ============================================================================

_OPPOSITE = {
    "left_of": "right_of",
    "right_of": "left_of",
    "above": "below",
    "below": "above",
    "on": "under",
    "under": "on",
    "next_to": "left_of",
}


def judge_entailment(target: str, answer: str) -> bool:
    """Word-sequence containment with relation synonym awareness."""
    from ..scene import canonical_relation

    answer_tokens = _tokens(answer)
    target_tokens = _tokens(target)
    if not target_tokens:
        return False
    # Relation targets: "the A is <phrase> the B" entails via any synonym.
    # Greedy middle so the final "the" is the object article, not one inside
    # the relation phrase ("to the left of").
    m = re.match(r"^the\s+(.+?)\s+is\s+(.+)\s+the\s+(.+)$", target.strip(), re.IGNORECASE)
    if m:
        relation, text = canonical_relation(m.group(2))
        if relation != "other":
            from ..scene import relation_synonym_phrases

            phrases = relation_synonym_phrases(relation)
            return any(_contains(answer_tokens, _tokens(p)) for p in phrases)
        return _contains(answer_tokens, _tokens(text or m.group(2)))
    return _contains(answer_tokens, target_tokens)


def _tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def _contains(haystack: list[str], needle: list[str]) -> bool:
    if not needle:
        return False
    n = len(needle)
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def _line_after(prompt: str, marker: str) -> str:
    for line in prompt.splitlines():
        if line.strip().startswith(marker):
            return line.strip()[len(marker):].strip()
    return ""


def _parse_box_line(prompt: str, marker: str) -> tuple[float, float, float, float]:
    for line in prompt.splitlines():
        if line.strip().startswith(marker):
            nums = re.findall(r"-?\d+(?:\.\d+)?", line.split("box:")[-1])
            if len(nums) >= 4:
                x, y, w, h = (float(v) for v in nums[:4])
                return x, y, w, h
    return 0.0, 0.0, 0.1, 0.1


def _parse_obstacle_line(prompt: str, marker: str) -> list[tuple[float, float, float, float]]:
    text = _line_after(prompt, marker)
    out = []
    for group in re.findall(r"\[([^\[\]]+)\]", text):
        nums = re.findall(r"-?\d+(?:\.\d+)?", group)
        if len(nums) >= 4:
            out.append(tuple(float(v) for v in nums[:4]))
    return out


# Which relation the OBJECT must get to the subject when it is the one that
# moves: "A left_of B" is fixed equally well by sending B right of A.
_ROLE_FLIP = {
    "left_of": "right_of",
    "right_of": "left_of",
    "above": "below",
    "below": "above",
    "on": "under",
    "under": "on",
    "next_to": "next_to",
}


def _plan_move(phrase: str, subject, obj, obstacles=()):
    """Pick who moves and where so the relation holds.

    Tries the subject first: an adjacent placement with a margin-plus gap,
    clamped into the canvas and slid along whichever axis the relation
    leaves free until it stops overlapping the anchor or an obstacle. When
    clamping ate the required separation (the anchor sits against the
    canvas edge), the object is moved instead. Sizes are kept. Returns
    ("subject"|"object", (x, y, w, h)), or ("infeasible", None) when
    neither single move can satisfy the relation.
    """
    from ..scene import canonical_relation

    relation, _ = canonical_relation(phrase)
    placed = _place_adjacent(relation, subject, obj, (*obstacles, obj))
    if _relation_ok(relation, placed, obj):
        return "subject", placed
    flipped = _ROLE_FLIP.get(relation)
    if flipped:
        alt = _place_adjacent(flipped, obj, subject, (*obstacles, subject))
        if _relation_ok(relation, subject, alt):
            return "object", alt
        return "infeasible", None
    return "subject", placed


def _relation_ok(relation: str, s, o) -> bool:
    """Normalized-coordinate mirror of the geometric relation check."""
    sx, sy, sw, sh = s
    ox, oy, ow, oh = o
    scx, scy, ocx, ocy = sx + sw / 2, sy + sh / 2, ox + ow / 2, oy + oh / 2
    m = RELATION_MARGIN
    gap = float(np.hypot(max(sx - ox - ow, ox - sx - sw, 0), max(sy - oy - oh, oy - sy - sh, 0)))
    across = min(sx + sw, ox + ow) > max(sx, ox)
    if relation == "left_of":
        return scx + m < ocx
    if relation == "right_of":
        return ocx + m < scx
    if relation == "above":
        return scy + m < ocy
    if relation == "below":
        return ocy + m < scy
    if relation == "next_to":
        return gap <= m
    if relation == "on":
        return scy + m / 2 < ocy and gap <= m and across
    if relation == "under":
        return ocy + m / 2 < scy and gap <= m and across
    return True


def _place_adjacent(relation: str, mover, anchor, obstacles=()):
    """Normalized box for `mover` adjacent to `anchor` so that
    `mover <relation> anchor` holds, dodging obstacles on the free axis."""
    sx, sy, sw, sh = mover
    ox, oy, ow, oh = anchor
    gap = RELATION_MARGIN * 0.5
    margin = RELATION_MARGIN

    def clamp(v: float, size: float) -> float:
        return min(max(v, 0.0), max(0.0, 1.0 - size))

    def clear(nx: float, ny: float) -> bool:
        for bx, by, bw, bh in obstacles:
            if min(nx + sw, bx + bw) > max(nx, bx) and min(ny + sh, by + bh) > max(ny, by):
                return False
        return True

    def slide(nx: float, ny: float, axis: str, lo: float = 0.0, hi: float = 1.0) -> tuple[float, float]:
        """First clear spot stepping away from the base placement, half the
        mover's own extent at a time, within [lo, hi) on the free axis."""
        base, size = (ny, sh) if axis == "y" else (nx, sw)
        hi = min(hi, 1.0)
        for k in range(0, 41):
            for sign in (1,) if k == 0 else (1, -1):
                v = clamp(base + sign * k * size / 2, size)
                if v < lo or v + size > hi + 1e-9:
                    continue
                cx, cy = (nx, v) if axis == "y" else (v, ny)
                if clear(cx, cy):
                    return cx, cy
        return nx, ny

    if relation == "left_of":
        nx = clamp(min(ox - gap - sw, ox + ow / 2 - margin - sw / 2 - 0.001), sw)
        return *slide(nx, clamp(sy, sh), "y"), sw, sh
    if relation == "right_of":
        nx = clamp(max(ox + ow + gap, ox + ow / 2 + margin + 0.001 - sw / 2), sw)
        return *slide(nx, clamp(sy, sh), "y"), sw, sh
    if relation == "above":
        ny = clamp(min(oy - gap - sh, oy + oh / 2 - margin - sh / 2 - 0.001), sh)
        return *slide(clamp(sx, sw), ny, "x"), sw, sh
    if relation == "below":
        ny = clamp(max(oy + oh + gap, oy + oh / 2 + margin + 0.001 - sh / 2), sh)
        return *slide(clamp(sx, sw), ny, "x"), sw, sh
    if relation == "on":
        # Contact pins y; x may roam only while boxes still overlap.
        nx = clamp(ox + ow / 2 - sw / 2, sw)
        ny = clamp(oy - sh, sh)
        return *slide(nx, ny, "x", lo=max(0.0, ox - sw + 0.01), hi=ox + ow - 0.01 + sw), sw, sh
    if relation == "under":
        nx = clamp(ox + ow / 2 - sw / 2, sw)
        ny = clamp(oy + oh, sh)
        return *slide(nx, ny, "x", lo=max(0.0, ox - sw + 0.01), hi=ox + ow - 0.01 + sw), sw, sh
    # next_to and anything else: snuggle up on the nearer horizontal side,
    # sliding only while the vertical ranges still overlap (keeps the edge
    # gap within the adjacency bound).
    near_left = sx + sw / 2 <= ox + ow / 2
    for side in (near_left, not near_left):
        nx = clamp(ox - gap * 0.5 - sw if side else ox + ow + gap * 0.5, sw)
        cx, cy = slide(nx, clamp(oy, sh), "y", lo=max(0.0, oy - sh + 0.01), hi=oy + oh - 0.01 + sh)
        if clear(cx, cy):
            return cx, cy, sw, sh
    return clamp(ox - gap * 0.5 - sw if near_left else ox + ow + gap * 0.5, sw), clamp(oy, sh), sw, sh


def _parse_object_description(description: str) -> tuple[str | None, str | None, str | None, str]:
    color = texture = shape_word = None
    noun_words: list[str] = []
    for w in description.strip().split():
        lw = w.lower().strip(",.")
        if lw in COLOR_NAMES and color is None:
            color = lw
        elif lw in TEXTURE_WORDS and texture is None:
            texture = lw
        elif lw in SHAPE_WORDS and shape_word is None:
            shape_word = lw
        elif lw in ("a", "an", "the"):
            continue
        else:
            noun_words.append(lw)
    noun = " ".join(noun_words) if noun_words else "thing"
    return color, texture, shape_word, noun


def _gap(a: Box, b: Box) -> float:
    dx = max(a.x - b.x2, b.x - a.x2, 0)
    dy = max(a.y - b.y2, b.y - a.y2, 0)
    return float(np.hypot(dx, dy))


def _downsample_latent(pixels: np.ndarray) -> np.ndarray:
    """Box-average over 8x8 blocks; edge blocks average what is there."""
    h, w = pixels.shape[:2]
    ch, cw = -(-h // LATENT_BLOCK), -(-w // LATENT_BLOCK)
    out = np.empty((ch, cw, 3), dtype=np.float64)
    f = pixels.astype(np.float64)
    for cy in range(ch):
        for cx in range(cw):
            block = f[cy * LATENT_BLOCK : (cy + 1) * LATENT_BLOCK, cx * LATENT_BLOCK : (cx + 1) * LATENT_BLOCK]
            out[cy, cx] = block.mean(axis=(0, 1))
    return out


def _upsample_latent(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    up = np.repeat(np.repeat(grid, LATENT_BLOCK, axis=0), LATENT_BLOCK, axis=1)
    return up[:height, :width]


def _box3_mean(latent: np.ndarray) -> np.ndarray:
    """Mean over the 3x3 neighborhood, edge cells over what exists."""
    h, w = latent.shape[:2]
    acc = np.zeros_like(latent)
    cnt = np.zeros((h, w, 1), dtype=np.float64)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            ys0, ys1 = max(0, dy), min(h, h + dy)
            xd0, xd1 = max(0, dx), min(w, w + dx)
            acc[ys0:ys1, xd0:xd1] += latent[max(0, -dy) : min(h, h - dy), max(0, -dx) : min(w, w - dx)]
            cnt[ys0:ys1, xd0:xd1] += 1
    return acc / cnt


def build_mock_suite(config: MockConfig | None = None) -> BackendSuite:
    """One shared FlatShapeMock behind every capability handle."""
    mock = FlatShapeMock(config)
    return BackendSuite(
        llm=mock,
        vlm=mock,
        detector=mock,
        segmenter=mock,
        inpainter=mock,
        editor=mock,
        layout_generator=mock,
        object_generator=mock,
        refiner=mock,
    )
