"""Turn a free-form scene description into a SceneSpec via the LLM backend.

The LLM is asked for strict JSON. Replies are parsed defensively: a JSON
object is extracted from surrounding chatter when possible, and a fallback
parser accepts the bracketed-tuple style some models emit, one tuple per
constraint: ["yellow deer_1"] for attributes, ["deer_1", "left of",
"bear_2"] for relations. Ids are renumbered to first-mention order, the spec
is validated, and violations are fed back in a repair re-prompt.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass

from . import prompts
from .backends.base import BackendSuite
from .backends.types import MalformedLLMOutput
from .geometry import COLOR_NAMES
from .scene import (
    AttributeConstraint,
    ObjectRef,
    SceneSpec,
    SpatialConstraint,
    canonical_relation,
    spec_from_json,
    validate,
)

DEFAULT_MAX_RETRIES = 2

_COLOR_WORDS = set(COLOR_NAMES)
_TEXTURE_WORDS = {"striped", "solid"}
_SHAPE_WORDS = {"rectangular", "square", "round", "elliptical", "oval"}


@dataclass(frozen=True)
class DecomposerConfig:
    max_retries: int = DEFAULT_MAX_RETRIES


def decompose(description: str, suite: BackendSuite, config: DecomposerConfig | None = None) -> SceneSpec:
    """Description -> validated SceneSpec, or MalformedLLMOutput."""
    config = config or DecomposerConfig()
    clean = " ".join(description.split())
    if not clean:
        raise ValueError("description is empty")

    prompt = prompts.fill("decompose", description=clean)
    problems: list[str] = []
    for _ in range(config.max_retries + 1):
        ask = prompt
        if problems:
            ask = prompt + prompts.fill("repair_suffix", violations="\n".join(f"- {p}" for p in problems))
        raw = suite.llm_complete(ask)
        try:
            spec = _build_spec(clean, raw)
        except ValueError as exc:
            problems = [str(exc)]
            continue
        violations = validate(spec)
        if not violations:
            return spec
        problems = [f"{v.field}: {v.message}" for v in violations]
    raise MalformedLLMOutput(f"no usable decomposition after {config.max_retries + 1} attempts: {problems}")


def _build_spec(description: str, raw: str) -> SceneSpec:
    data = _extract_json(raw)
    if data is None:
        data = _parse_tuples(raw)
    if data is None:
        raise ValueError("reply is neither JSON nor bracketed tuples")
    spec = spec_from_json({"description": description, **data})
    return _renumber(spec)


def _extract_json(raw: str) -> dict | None:
    start = raw.find("{")
    end = raw.rfind("}")
    if start < 0 or end <= start:
        return None
    try:
        data = json.loads(raw[start : end + 1])
    except json.JSONDecodeError:
        return None
    if not isinstance(data, dict) or "objects" not in data:
        return None
    for spat in data.get("spatials", []):
        relation, text = canonical_relation(str(spat.get("relation", "")))
        spat["relation"] = relation
        if text is not None:
            spat["relation_text"] = text
    return data


_TUPLE_RE = re.compile(r"\[((?:\s*\"[^\"]*\"\s*,?)+)\]")
_QUOTED_RE = re.compile(r"\"([^\"]*)\"")


def _parse_tuples(raw: str) -> dict | None:
    """Bracketed-tuple fallback: one-element attribute tuples, three-element
    relation tuples. Anything else is a parse failure."""
    groups = [_QUOTED_RE.findall(m.group(1)) for m in _TUPLE_RE.finditer(raw)]
    if not groups:
        return None

    objects: list[dict] = []
    seen: dict[str, dict] = {}
    attributes: list[dict] = []
    spatials: list[dict] = []

    def ref_of(display: str) -> dict:
        ref = ObjectRef.parse(display.strip())
        key = ref.display
        if key not in seen:
            entry = {"base_name": ref.base_name, "id": ref.id}
            seen[key] = entry
            objects.append(entry)
        return seen[key]

    for items in groups:
        if len(items) == 1:
            words = items[0].split()
            if not words:
                raise ValueError(f"empty tuple in {items!r}")
            ref = ref_of(words[-1])
            for adjective in words[:-1]:
                lw = adjective.lower()
                if lw in _COLOR_WORDS:
                    category = "color"
                elif lw in _TEXTURE_WORDS:
                    category = "texture"
                elif lw in _SHAPE_WORDS:
                    category = "shape"
                else:
                    raise ValueError(f"adjective {adjective!r} has no known category")
                attributes.append({"object": ref, "category": category, "attribute": lw})
        elif len(items) == 3:
            subject = ref_of(items[0])
            obj = ref_of(items[2])
            relation, text = canonical_relation(items[1])
            spatials.append(
                {"subject": subject, "relation": relation, "relation_text": text, "object": obj}
            )
        else:
            raise ValueError(f"tuple with {len(items)} elements is not a constraint")
    return {"objects": objects, "attributes": attributes, "spatials": spatials}


def _renumber(spec: SceneSpec) -> SceneSpec:
    """Reassign ids 1..k per base name in first-mention order, remapping
    every reference."""
    mapping: dict[ObjectRef, ObjectRef] = {}
    fresh: list[ObjectRef] = []
    counts: dict[str, int] = {}
    for ref in spec.objects:
        if ref in mapping:
            continue
        counts[ref.base_name] = counts.get(ref.base_name, 0) + 1
        new = ObjectRef(ref.base_name, counts[ref.base_name])
        mapping[ref] = new
        fresh.append(new)

    def remap(ref: ObjectRef) -> ObjectRef:
        if ref not in mapping:  # dangling reference; keep it so validate reports it
            return ref
        return mapping[ref]

    return SceneSpec(
        description=spec.description,
        objects=fresh,
        attributes=[
            AttributeConstraint(remap(a.object), a.category, a.attribute) for a in spec.attributes
        ],
        spatials=[
            SpatialConstraint(remap(s.subject), s.relation, remap(s.object), s.relation_text)
            for s in spec.spatials
        ],
    )
