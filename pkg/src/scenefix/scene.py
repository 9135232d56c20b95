"""Scene model: the typed contract every other module speaks.

A scene description is normalized into a SceneSpec: the set of object
instances (each a base noun plus a stable numeric id), per-instance attribute
constraints, and pairwise spatial constraints. Subtasks are derived from the
spec mechanically; nothing here talks to a model backend or parses free-form
language (that is the decomposer's job).
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources

# ============================================================================
# Relation canonicalization
# ============================================================================

CORE_RELATIONS = ("left_of", "right_of", "above", "below", "next_to", "on", "under")
OTHER_RELATION = "other"

ATTRIBUTE_CATEGORIES = ("color", "texture", "shape")


def _load_synonyms() -> dict[str, str]:
    raw = resources.files("scenefix.config").joinpath("relation_synonyms.json").read_text()
    table = json.loads(raw)
    flat: dict[str, str] = {}
    for canon, phrases in table.items():
        flat[canon] = canon
        for p in phrases:
            flat[p.strip().lower()] = canon
    return flat


_SYNONYMS = _load_synonyms()


def canonical_relation(text: str) -> tuple[str, str | None]:
    """Map free text to (relation, relation_text).

    Known phrases collapse to a core relation; anything else is kept verbatim
    under the "other" escape so no user intent is silently dropped.
    """
    key = text.strip().lower().replace("-", " ")
    key = re.sub(r"\s+", " ", key)
    if key in _SYNONYMS:
        return _SYNONYMS[key], None
    return OTHER_RELATION, text.strip()


def relation_synonym_phrases(relation: str) -> list[str]:
    """Every phrase that canonicalizes to the given relation."""
    return [phrase for phrase, canon in _SYNONYMS.items() if canon == relation]


def relation_phrase(relation: str, relation_text: str | None = None) -> str:
    """Human phrase for a relation, used in prompts and answers.

    Core relations have fixed phrasing; the "other" escape falls back to the
    verbatim text the constraint was declared with.
    """
    phrases = {
        "left_of": "to the left of",
        "right_of": "to the right of",
        "above": "above",
        "below": "below",
        "next_to": "next to",
        "on": "on",
        "under": "under",
    }
    if relation in phrases:
        return phrases[relation]
    if relation == OTHER_RELATION and relation_text:
        return relation_text
    raise ValueError(f"no phrase for relation {relation!r}")


# ============================================================================
# Core value types
# ============================================================================


@dataclass(frozen=True, slots=True)
class ObjectRef:
    """One object instance: a base noun plus a 1-based id unique in the scene."""

    base_name: str
    id: int

    @property
    def display(self) -> str:
        return f"{self.base_name}_{self.id}"

    @staticmethod
    def parse(display: str) -> "ObjectRef":
        base, sep, tail = display.rpartition("_")
        if not sep or not base or not tail.isdigit():
            raise ValueError(f"not a canonical object display: {display!r}")
        return ObjectRef(base, int(tail))


@dataclass(frozen=True, slots=True)
class AttributeConstraint:
    """Target value for one attribute category of one object."""

    object: ObjectRef
    category: str  # one of ATTRIBUTE_CATEGORIES
    attribute: str


@dataclass(frozen=True, slots=True)
class SpatialConstraint:
    """Required relation of subject with respect to object."""

    subject: ObjectRef
    relation: str
    object: ObjectRef
    relation_text: str | None = None  # free text when relation == "other"


@dataclass(slots=True)
class SceneSpec:
    """Everything the description demands of the image."""

    description: str
    objects: list[ObjectRef] = field(default_factory=list)
    attributes: list[AttributeConstraint] = field(default_factory=list)
    spatials: list[SpatialConstraint] = field(default_factory=list)

    def target_counts(self) -> dict[str, int]:
        """Required instance count per base name, keyed in first-mention order."""
        counts: dict[str, int] = {}
        for ref in self.objects:
            counts[ref.base_name] = counts.get(ref.base_name, 0) + 1
        return counts

    def refs_for(self, base_name: str) -> list[ObjectRef]:
        return sorted((r for r in self.objects if r.base_name == base_name), key=lambda r: r.id)

    def attributes_for(self, ref: ObjectRef) -> list[AttributeConstraint]:
        return [a for a in self.attributes if a.object == ref]


# ============================================================================
# Validation
# ============================================================================


@dataclass(frozen=True, slots=True)
class Violation:
    rule: str
    field: str
    message: str


def validate(spec: SceneSpec) -> list[Violation]:
    """Total check of spec consistency; returns every violation found."""
    out: list[Violation] = []
    refs = set()
    for i, ref in enumerate(spec.objects):
        if not ref.base_name.strip():
            out.append(Violation("empty_base_name", f"objects[{i}]", "object base name is empty"))
        if ref.id < 1:
            out.append(Violation("bad_id", f"objects[{i}]", f"id {ref.id} is not positive"))
        if ref in refs:
            out.append(Violation("duplicate_id", f"objects[{i}]", f"{ref.display} declared twice"))
        refs.add(ref)

    seen_cat: set[tuple[ObjectRef, str]] = set()
    for i, con in enumerate(spec.attributes):
        where = f"attributes[{i}]"
        if con.object not in refs:
            out.append(Violation("unknown_ref", where, f"{con.object.display} not in objects"))
        if con.category not in ATTRIBUTE_CATEGORIES:
            out.append(Violation("bad_category", where, f"category {con.category!r} unknown"))
        if not con.attribute.strip():
            out.append(Violation("empty_attribute", where, "attribute value is empty"))
        key = (con.object, con.category)
        if key in seen_cat:
            out.append(
                Violation("duplicate_constraint", where,
                          f"{con.object.display} already has a {con.category} constraint")
            )
        seen_cat.add(key)

    for i, con in enumerate(spec.spatials):
        where = f"spatials[{i}]"
        if con.subject not in refs:
            out.append(Violation("unknown_ref", where, f"{con.subject.display} not in objects"))
        if con.object not in refs:
            out.append(Violation("unknown_ref", where, f"{con.object.display} not in objects"))
        if con.subject == con.object:
            out.append(Violation("self_relation", where, f"{con.subject.display} related to itself"))
        if con.relation not in CORE_RELATIONS + (OTHER_RELATION,):
            out.append(Violation("bad_relation", where, f"relation {con.relation!r} unknown"))
        if con.relation == OTHER_RELATION and not (con.relation_text or "").strip():
            out.append(Violation("empty_relation_text", where, "other-relation needs text"))
    return out


# ============================================================================
# Subtasks
# ============================================================================

KIND_COUNTING = "counting"
KIND_ATTRIBUTE = "attribute"
KIND_SPATIAL = "spatial"


@dataclass(frozen=True, slots=True)
class Subtask:
    """One unit of correction work derived from the spec.

    Exactly one of the payload fields is populated, matching `kind`.
    """

    id: str
    kind: str
    base_name: str | None = None
    target_count: int | None = None
    attribute: AttributeConstraint | None = None
    spatial: SpatialConstraint | None = None


def to_subtasks(spec: SceneSpec) -> list[Subtask]:
    """Counting first (one per base name, first-mention order), then
    attributes and spatials in declaration order. Ids are stable across runs.
    """
    tasks: list[Subtask] = []
    for base, count in spec.target_counts().items():
        tasks.append(Subtask(id=f"count:{base}", kind=KIND_COUNTING, base_name=base, target_count=count))
    for con in spec.attributes:
        tasks.append(
            Subtask(id=f"attr:{con.category}:{con.object.display}", kind=KIND_ATTRIBUTE, attribute=con)
        )
    for con in spec.spatials:
        rel = con.relation if con.relation != OTHER_RELATION else f"other({con.relation_text})"
        tasks.append(
            Subtask(
                id=f"spatial:{con.subject.display}:{rel}:{con.object.display}",
                kind=KIND_SPATIAL,
                spatial=con,
            )
        )
    return tasks


# ============================================================================
# Wire format (canonical JSON)
# ============================================================================


def _ref_to_json(ref: ObjectRef) -> dict:
    return {"base_name": ref.base_name, "id": ref.id}


def _ref_from_json(data: dict) -> ObjectRef:
    return ObjectRef(str(data["base_name"]), int(data["id"]))


def spec_to_json(spec: SceneSpec) -> dict:
    return {
        "description": spec.description,
        "objects": [_ref_to_json(r) for r in spec.objects],
        "attributes": [
            {"object": _ref_to_json(a.object), "category": a.category, "attribute": a.attribute}
            for a in spec.attributes
        ],
        "spatials": [
            {
                "subject": _ref_to_json(s.subject),
                "relation": s.relation,
                "relation_text": s.relation_text,
                "object": _ref_to_json(s.object),
            }
            for s in spec.spatials
        ],
    }


def spec_from_json(data: dict) -> SceneSpec:
    return SceneSpec(
        description=str(data.get("description", "")),
        objects=[_ref_from_json(r) for r in data.get("objects", [])],
        attributes=[
            AttributeConstraint(_ref_from_json(a["object"]), str(a["category"]), str(a["attribute"]))
            for a in data.get("attributes", [])
        ],
        spatials=[
            SpatialConstraint(
                _ref_from_json(s["subject"]),
                str(s["relation"]),
                _ref_from_json(s["object"]),
                s.get("relation_text"),
            )
            for s in data.get("spatials", [])
        ],
    )
