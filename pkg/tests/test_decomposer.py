"""Description decomposition: happy path, repair loop, fallback parser."""

from __future__ import annotations

from dataclasses import replace

import pytest

from scenefix.backends.types import MalformedLLMOutput
from scenefix.decomposer import DecomposerConfig, decompose
from scenefix.scene import ObjectRef


class ScriptedLLM:
    """Canned replies, recorded prompts."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts = []

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if not self.replies:
            return ""
        return self.replies.pop(0)


def scripted_suite(exact_suite, replies):
    return replace(exact_suite, llm=ScriptedLLM(replies))


class TestHappyPath:
    def test_counts_attributes_spatials(self, exact_suite):
        spec = decompose(
            "one red dog and two blue cats; the dog is left of the cat.",
            exact_suite,
        )
        assert spec.target_counts() == {"dog": 1, "cat": 2}
        attrs = {(a.object.display, a.category): a.attribute for a in spec.attributes}
        assert attrs == {
            ("dog_1", "color"): "red",
            ("cat_1", "color"): "blue",
            ("cat_2", "color"): "blue",
        }
        (spatial,) = spec.spatials
        assert spatial.subject == ObjectRef("dog", 1)
        assert spatial.relation == "left_of"
        assert spatial.object == ObjectRef("cat", 1)

    def test_whitespace_collapsed(self, exact_suite):
        spec = decompose("a   green\n frog.", exact_suite)
        assert spec.target_counts() == {"frog": 1}

    def test_empty_description_rejected(self, exact_suite):
        with pytest.raises(ValueError):
            decompose("   ", exact_suite)


class TestJsonExtraction:
    def test_json_amid_chatter(self, exact_suite):
        reply = (
            'Sure, here is the breakdown:\n'
            '{"objects": [{"base_name": "dog", "id": 1}],'
            ' "attributes": [], "spatials": []}\n'
            'Let me know if that helps.'
        )
        suite = scripted_suite(exact_suite, [reply])
        spec = decompose("a dog.", suite)
        assert spec.objects == [ObjectRef("dog", 1)]

    def test_relations_canonicalized(self, exact_suite):
        reply = (
            '{"objects": [{"base_name": "dog", "id": 1}, {"base_name": "cat", "id": 2}],'
            ' "attributes": [],'
            ' "spatials": [{"subject": {"base_name": "dog", "id": 1},'
            ' "relation": "to the LEFT of",'
            ' "object": {"base_name": "cat", "id": 2}}]}'
        )
        suite = scripted_suite(exact_suite, [reply])
        spec = decompose("a dog and a cat; the dog is left of the cat.", suite)
        assert spec.spatials[0].relation == "left_of"

    def test_ids_renumbered_per_base(self, exact_suite):
        reply = (
            '{"objects": [{"base_name": "dog", "id": 7},'
            ' {"base_name": "cat", "id": 9}, {"base_name": "dog", "id": 3}],'
            ' "attributes": [], "spatials": []}'
        )
        suite = scripted_suite(exact_suite, [reply])
        spec = decompose("two dogs and a cat.", suite)
        assert spec.objects == [
            ObjectRef("dog", 1),
            ObjectRef("cat", 1),
            ObjectRef("dog", 2),
        ]


class TestTupleFallback:
    def test_bracketed_tuples(self, exact_suite):
        reply = '["yellow deer_1"]\n["deer_1", "left of", "bear_2"]\n["brown bear_2"]'
        suite = scripted_suite(exact_suite, [reply])
        spec = decompose("a yellow deer left of a brown bear.", suite)
        assert spec.target_counts() == {"deer": 1, "bear": 1}
        attrs = {(a.object.display, a.category): a.attribute for a in spec.attributes}
        assert attrs[("deer_1", "color")] == "yellow"
        assert attrs[("bear_1", "color")] == "brown"
        (spatial,) = spec.spatials
        assert spatial.relation == "left_of"
        assert spatial.subject.base_name == "deer"
        assert spatial.object.base_name == "bear"


class TestRepairLoop:
    GOOD = '{"objects": [{"base_name": "dog", "id": 1}], "attributes": [], "spatials": []}'

    def test_retry_after_malformed_reply(self, exact_suite):
        suite = scripted_suite(exact_suite, ["no json here at all", self.GOOD])
        spec = decompose("a dog.", suite)
        assert spec.objects == [ObjectRef("dog", 1)]
        assert len(suite.llm.prompts) == 2

    def test_repair_prompt_names_the_problem(self, exact_suite):
        bad = (
            '{"objects": [{"base_name": "dog", "id": 1}],'
            ' "attributes": [{"object": {"base_name": "cat", "id": 5},'
            ' "category": "color", "attribute": "red"}], "spatials": []}'
        )
        suite = scripted_suite(exact_suite, [bad, self.GOOD])
        decompose("a dog.", suite)
        assert len(suite.llm.prompts) == 2
        assert "cat_5" in suite.llm.prompts[1]

    def test_exhausted_retries_raise(self, exact_suite):
        suite = scripted_suite(exact_suite, ["junk", "junk", "junk", "junk"])
        with pytest.raises(MalformedLLMOutput):
            decompose("a dog.", suite, DecomposerConfig(max_retries=2))
        assert len(suite.llm.prompts) == 3

    def test_zero_retries(self, exact_suite):
        suite = scripted_suite(exact_suite, ["junk"])
        with pytest.raises(MalformedLLMOutput):
            decompose("a dog.", suite, DecomposerConfig(max_retries=0))
        assert len(suite.llm.prompts) == 1
