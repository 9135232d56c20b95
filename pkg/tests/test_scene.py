"""Scene spec model: canonicalization, validation, subtask derivation."""

from __future__ import annotations

import pytest

from scenefix.geometry import CORE_RELATIONS
from scenefix.scene import (
    KIND_ATTRIBUTE,
    KIND_COUNTING,
    KIND_SPATIAL,
    AttributeConstraint,
    ObjectRef,
    SceneSpec,
    SpatialConstraint,
    canonical_relation,
    relation_phrase,
    relation_synonym_phrases,
    spec_from_json,
    spec_to_json,
    to_subtasks,
    validate,
)


def small_spec():
    dog1, dog2, cat1 = ObjectRef("dog", 1), ObjectRef("dog", 2), ObjectRef("cat", 1)
    return SceneSpec(
        description="two dogs and a cat",
        objects=[dog1, dog2, cat1],
        attributes=[
            AttributeConstraint(dog1, "color", "red"),
            AttributeConstraint(cat1, "texture", "striped"),
        ],
        spatials=[SpatialConstraint(dog1, "left_of", cat1)],
    )


class TestCanonicalRelation:
    def test_every_synonym_collapses(self):
        for relation in CORE_RELATIONS:
            phrases = relation_synonym_phrases(relation)
            assert phrases, f"no synonyms registered for {relation}"
            for phrase in phrases:
                assert canonical_relation(phrase) == (relation, None)

    def test_normalization(self):
        assert canonical_relation(" Left-Of ") == ("left_of", None)
        assert canonical_relation("NEXT   TO") == ("next_to", None)

    def test_unknown_kept_verbatim(self):
        assert canonical_relation("orbiting around") == ("other", "orbiting around")

    def test_phrase_for_core_relations(self):
        assert relation_phrase("left_of") == "to the left of"
        assert relation_phrase("on") == "on"

    def test_phrase_for_other_uses_text(self):
        assert relation_phrase("other", "inside") == "inside"

    def test_phrase_unknown_relation_raises(self):
        with pytest.raises(ValueError):
            relation_phrase("diagonal_to")


class TestObjectRef:
    def test_display(self):
        assert ObjectRef("dog", 2).display == "dog_2"

    def test_parse_round_trip(self):
        ref = ObjectRef("traffic_light", 3)
        assert ObjectRef.parse(ref.display) == ref

    @pytest.mark.parametrize("bad", ["dog", "dog_", "_1", "dog_x", ""])
    def test_parse_rejects_non_canonical(self, bad):
        with pytest.raises(ValueError):
            ObjectRef.parse(bad)


class TestSceneSpec:
    def test_target_counts_first_mention_order(self):
        spec = SceneSpec(
            description="",
            objects=[ObjectRef("cat", 1), ObjectRef("dog", 1), ObjectRef("cat", 2)],
        )
        assert list(spec.target_counts().items()) == [("cat", 2), ("dog", 1)]

    def test_refs_for_sorted_by_id(self):
        spec = SceneSpec(
            description="",
            objects=[ObjectRef("dog", 2), ObjectRef("dog", 1), ObjectRef("cat", 1)],
        )
        assert spec.refs_for("dog") == [ObjectRef("dog", 1), ObjectRef("dog", 2)]

    def test_attributes_for(self):
        spec = small_spec()
        assert spec.attributes_for(ObjectRef("dog", 1)) == [
            AttributeConstraint(ObjectRef("dog", 1), "color", "red")
        ]
        assert spec.attributes_for(ObjectRef("dog", 2)) == []


class TestValidate:
    def test_clean_spec_passes(self):
        assert validate(small_spec()) == []

    def rules_of(self, spec):
        return {v.rule for v in validate(spec)}

    def test_empty_base_name(self):
        spec = SceneSpec(description="", objects=[ObjectRef("  ", 1)])
        assert "empty_base_name" in self.rules_of(spec)

    def test_bad_id(self):
        spec = SceneSpec(description="", objects=[ObjectRef("dog", 0)])
        assert "bad_id" in self.rules_of(spec)

    def test_duplicate_id(self):
        spec = SceneSpec(description="", objects=[ObjectRef("dog", 1), ObjectRef("dog", 1)])
        assert "duplicate_id" in self.rules_of(spec)

    def test_unknown_ref_in_attribute(self):
        spec = SceneSpec(
            description="",
            objects=[ObjectRef("dog", 1)],
            attributes=[AttributeConstraint(ObjectRef("cat", 1), "color", "red")],
        )
        assert "unknown_ref" in self.rules_of(spec)

    def test_bad_category(self):
        spec = SceneSpec(
            description="",
            objects=[ObjectRef("dog", 1)],
            attributes=[AttributeConstraint(ObjectRef("dog", 1), "size", "big")],
        )
        assert "bad_category" in self.rules_of(spec)

    def test_empty_attribute(self):
        spec = SceneSpec(
            description="",
            objects=[ObjectRef("dog", 1)],
            attributes=[AttributeConstraint(ObjectRef("dog", 1), "color", " ")],
        )
        assert "empty_attribute" in self.rules_of(spec)

    def test_duplicate_constraint(self):
        ref = ObjectRef("dog", 1)
        spec = SceneSpec(
            description="",
            objects=[ref],
            attributes=[
                AttributeConstraint(ref, "color", "red"),
                AttributeConstraint(ref, "color", "blue"),
            ],
        )
        assert "duplicate_constraint" in self.rules_of(spec)

    def test_self_relation(self):
        ref = ObjectRef("dog", 1)
        spec = SceneSpec(
            description="",
            objects=[ref],
            spatials=[SpatialConstraint(ref, "left_of", ref)],
        )
        assert "self_relation" in self.rules_of(spec)

    def test_bad_relation(self):
        spec = SceneSpec(
            description="",
            objects=[ObjectRef("dog", 1), ObjectRef("cat", 1)],
            spatials=[SpatialConstraint(ObjectRef("dog", 1), "inside", ObjectRef("cat", 1))],
        )
        assert "bad_relation" in self.rules_of(spec)

    def test_empty_relation_text(self):
        spec = SceneSpec(
            description="",
            objects=[ObjectRef("dog", 1), ObjectRef("cat", 1)],
            spatials=[SpatialConstraint(ObjectRef("dog", 1), "other", ObjectRef("cat", 1))],
        )
        assert "empty_relation_text" in self.rules_of(spec)

    def test_unknown_refs_in_spatial_counted_per_side(self):
        spec = SceneSpec(
            description="",
            objects=[],
            spatials=[SpatialConstraint(ObjectRef("dog", 1), "left_of", ObjectRef("cat", 1))],
        )
        assert sum(v.rule == "unknown_ref" for v in validate(spec)) == 2


class TestToSubtasks:
    def test_order_and_ids(self):
        tasks = to_subtasks(small_spec())
        assert [t.id for t in tasks] == [
            "count:dog",
            "count:cat",
            "attr:color:dog_1",
            "attr:texture:cat_1",
            "spatial:dog_1:left_of:cat_1",
        ]
        assert [t.kind for t in tasks] == [
            KIND_COUNTING,
            KIND_COUNTING,
            KIND_ATTRIBUTE,
            KIND_ATTRIBUTE,
            KIND_SPATIAL,
        ]

    def test_counting_payload(self):
        tasks = to_subtasks(small_spec())
        assert tasks[0].base_name == "dog"
        assert tasks[0].target_count == 2
        assert tasks[1].target_count == 1

    def test_other_relation_id_carries_text(self):
        spec = SceneSpec(
            description="",
            objects=[ObjectRef("dog", 1), ObjectRef("cat", 1)],
            spatials=[
                SpatialConstraint(ObjectRef("dog", 1), "other", ObjectRef("cat", 1), "inside")
            ],
        )
        (task,) = [t for t in to_subtasks(spec) if t.kind == KIND_SPATIAL]
        assert task.id == "spatial:dog_1:other(inside):cat_1"

    def test_ids_stable_across_calls(self):
        spec = small_spec()
        assert [t.id for t in to_subtasks(spec)] == [t.id for t in to_subtasks(spec)]


class TestSpecJson:
    def test_round_trip(self):
        spec = small_spec()
        again = spec_from_json(spec_to_json(spec))
        assert again.description == spec.description
        assert again.objects == spec.objects
        assert again.attributes == spec.attributes
        assert again.spatials == spec.spatials

    def test_other_relation_round_trip(self):
        spec = SceneSpec(
            description="",
            objects=[ObjectRef("dog", 1), ObjectRef("cat", 1)],
            spatials=[
                SpatialConstraint(ObjectRef("dog", 1), "other", ObjectRef("cat", 1), "inside")
            ],
        )
        again = spec_from_json(spec_to_json(spec))
        assert again.spatials[0].relation_text == "inside"
