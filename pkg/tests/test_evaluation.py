"""Benchmark machinery: scene generation, annotation-based scoring, suite
execution, and report aggregation."""
import csv
import json

import pytest

from conftest import make_world, render_world

from scenefix.backends import build_mock_suite
from scenefix.backends.mock import MockConfig
from scenefix.evaluation import (
    CORRUPTIONS,
    EvalConfig,
    aggregate,
    background_deviation,
    correction_rate,
    generate_suite,
    run_ablations,
    run_scene,
    run_suite,
    score,
)
from scenefix.orchestrator import JobOptions
from scenefix.scene import AttributeConstraint, ObjectRef, SceneSpec, SpatialConstraint, validate


def spec_for(objects, attributes=(), spatials=(), description="synthetic"):
    return SceneSpec(
        description=description,
        objects=list(objects),
        attributes=list(attributes),
        spatials=list(spatials),
    )


class TestGeneration:
    def test_same_seed_same_suite(self):
        assert generate_suite(12, seed=3) == generate_suite(12, seed=3)

    def test_different_seeds_differ(self):
        assert generate_suite(12, seed=3) != generate_suite(12, seed=4)

    def test_scene_ids_are_unique(self):
        scenes = generate_suite(20, seed=1)
        assert len({s.scene_id for s in scenes}) == 20

    def test_corruption_counts_and_vocabulary(self):
        scenes = generate_suite(30, seed=2)
        for scene in scenes:
            assert 1 <= len(scene.corruptions) <= 3
            assert set(scene.corruptions) <= set(CORRUPTIONS)

    def test_every_corruption_kind_appears(self):
        scenes = generate_suite(30, seed=2)
        seen = {c for scene in scenes for c in scene.corruptions}
        assert seen == set(CORRUPTIONS)

    def test_specs_are_valid(self):
        for scene in generate_suite(25, seed=6):
            assert validate(scene.spec) == []

    def test_every_scene_starts_violated(self):
        for scene in generate_suite(25, seed=8):
            card = score(render_world(scene.world), scene.spec)
            assert any(row["satisfied"] is False for row in card.rows), scene.scene_id

    def test_description_restates_the_spec(self):
        for scene in generate_suite(10, seed=4):
            assert scene.description == scene.spec.description
            assert scene.description.endswith(".")


class TestScore:
    def test_satisfied_scene_scores_clean(self):
        world = make_world(128, 128, [("star", "rectangle", "blue", "solid", (30, 30, 40, 30))])
        spec = spec_for(
            [ObjectRef("star", 1)],
            [AttributeConstraint(ObjectRef("star", 1), "color", "blue")],
        )
        card = score(render_world(world), spec)
        assert [row["satisfied"] for row in card.rows] == [True, True]
        assert card.accuracy("counting") == 1.0
        assert card.accuracy("color") == 1.0

    def test_wrong_color_is_spotted(self):
        world = make_world(128, 128, [("star", "rectangle", "blue", "solid", (30, 30, 40, 30))])
        spec = spec_for(
            [ObjectRef("star", 1)],
            [AttributeConstraint(ObjectRef("star", 1), "color", "red")],
        )
        card = score(render_world(world), spec)
        color_row = next(row for row in card.rows if row["kind"] == "color")
        assert color_row["satisfied"] is False
        assert color_row["bound"] is True

    def test_missing_object_fails_counting_and_unbinds(self):
        world = make_world(128, 128, [("dog", "ellipse", "gray", "solid", (10, 10, 40, 40))])
        spec = spec_for(
            [ObjectRef("dog", 1), ObjectRef("dog", 2)],
            [AttributeConstraint(ObjectRef("dog", 2), "color", "gray")],
        )
        card = score(render_world(world), spec)
        counting = next(row for row in card.rows if row["kind"] == "counting")
        assert counting["satisfied"] is False
        orphan = next(row for row in card.rows if row["kind"] == "color")
        assert orphan["satisfied"] is False
        assert orphan["bound"] is False

    def test_striped_object_reads_as_its_color_and_texture(self):
        world = make_world(128, 128, [("star", "rectangle", "red", "striped", (30, 30, 40, 30))])
        spec = spec_for(
            [ObjectRef("star", 1)],
            [
                AttributeConstraint(ObjectRef("star", 1), "color", "red"),
                AttributeConstraint(ObjectRef("star", 1), "texture", "striped"),
            ],
        )
        card = score(render_world(world), spec)
        assert all(row["satisfied"] for row in card.rows)

    def test_solid_object_fails_a_striped_demand(self):
        world = make_world(128, 128, [("star", "rectangle", "red", "solid", (30, 30, 40, 30))])
        spec = spec_for(
            [ObjectRef("star", 1)],
            [AttributeConstraint(ObjectRef("star", 1), "texture", "striped")],
        )
        card = score(render_world(world), spec)
        texture_row = next(row for row in card.rows if row["kind"] == "texture")
        assert texture_row["satisfied"] is False

    def test_shape_words_canonicalize(self):
        world = make_world(128, 128, [("ball", "ellipse", "red", "solid", (30, 30, 40, 40))])
        for word, expected in (("round", True), ("oval", True), ("rectangular", False), ("square", False)):
            spec = spec_for(
                [ObjectRef("ball", 1)],
                [AttributeConstraint(ObjectRef("ball", 1), "shape", word)],
            )
            card = score(render_world(world), spec)
            shape_row = next(row for row in card.rows if row["kind"] == "shape")
            assert shape_row["satisfied"] is expected, word

    def test_spatial_rows_follow_footprints(self):
        world = make_world(
            200,
            128,
            [
                ("dog", "ellipse", "gray", "solid", (10, 40, 40, 40)),
                ("cat", "ellipse", "gray", "solid", (130, 40, 40, 40)),
            ],
        )
        spec = spec_for(
            [ObjectRef("dog", 1), ObjectRef("cat", 1)],
            spatials=[SpatialConstraint(ObjectRef("dog", 1), "left_of", ObjectRef("cat", 1))],
        )
        card = score(render_world(world), spec)
        spatial_row = next(row for row in card.rows if row["kind"] == "spatial")
        assert spatial_row["satisfied"] is True

        flipped = spec_for(
            [ObjectRef("dog", 1), ObjectRef("cat", 1)],
            spatials=[SpatialConstraint(ObjectRef("cat", 1), "left_of", ObjectRef("dog", 1))],
        )
        assert score(render_world(world), flipped).accuracy("spatial") == 0.0

    def test_other_relations_are_not_scored(self):
        world = make_world(
            200,
            128,
            [
                ("dog", "ellipse", "gray", "solid", (10, 40, 40, 40)),
                ("cat", "ellipse", "gray", "solid", (130, 40, 40, 40)),
            ],
        )
        spec = spec_for(
            [ObjectRef("dog", 1), ObjectRef("cat", 1)],
            spatials=[
                SpatialConstraint(ObjectRef("dog", 1), "other", ObjectRef("cat", 1), "inside")
            ],
        )
        card = score(render_world(world), spec)
        spatial_row = next(row for row in card.rows if row["kind"] == "spatial")
        assert spatial_row["satisfied"] is None
        assert card.accuracy("spatial") is None

    def test_binding_gives_the_largest_instance_the_lowest_id(self):
        world = make_world(
            200,
            128,
            [
                ("dog", "ellipse", "blue", "solid", (20, 20, 30, 30)),
                ("dog", "ellipse", "red", "solid", (100, 20, 60, 60)),
            ],
        )
        spec = spec_for(
            [ObjectRef("dog", 1), ObjectRef("dog", 2)],
            [
                AttributeConstraint(ObjectRef("dog", 1), "color", "red"),
                AttributeConstraint(ObjectRef("dog", 2), "color", "blue"),
            ],
        )
        card = score(render_world(world), spec)
        assert all(row["satisfied"] for row in card.rows if row["kind"] == "color")

    def test_unannotated_image_is_rejected(self):
        world = make_world(64, 64, [("star", "rectangle", "blue", "solid", (10, 10, 20, 20))])
        bare = render_world(world).with_world(None)
        with pytest.raises(ValueError, match="annotat"):
            score(bare, spec_for([ObjectRef("star", 1)]))


class TestAggregation:
    @staticmethod
    def row(pre, post, flags=(), status="done"):
        return {
            "scene_id": "s",
            "status": status,
            "flags": list(flags),
            "error": None,
            "corruptions": [],
            "seconds": 1.0,
            "job_id": "j",
            "pre": pre,
            "post": post,
        }

    def test_aggregate_counts_by_kind_and_phase(self):
        item = lambda kind, ok, detail="d": {
            "kind": kind, "detail": detail, "satisfied": ok, "bound": True
        }
        rows = [
            self.row([item("color", False)], [item("color", True)]),
            self.row([item("color", True)], [item("color", True)]),
            self.row(
                [item("counting", False)],
                [item("counting", False)],
                flags=["placement_infeasible"],
                status="partially_corrected",
            ),
        ]
        out = aggregate(rows)
        assert out["scenes"] == 3
        assert out["pre_color"] == 0.5
        assert out["post_color"] == 1.0
        assert out["post_counting"] == 0.0
        assert out["post_shape"] is None
        assert out["flagged"] == 1
        assert out["errors"] == 0

    def test_correction_rate_ignores_unbound_and_already_satisfied(self):
        rows = [
            self.row(
                [
                    {"kind": "color", "detail": "a", "satisfied": False, "bound": True},
                    {"kind": "color", "detail": "b", "satisfied": False, "bound": True},
                    {"kind": "color", "detail": "c", "satisfied": True, "bound": True},
                    {"kind": "color", "detail": "d", "satisfied": False, "bound": False},
                ],
                [
                    {"kind": "color", "detail": "a", "satisfied": True, "bound": True},
                    {"kind": "color", "detail": "b", "satisfied": False, "bound": True},
                    {"kind": "color", "detail": "c", "satisfied": True, "bound": True},
                    {"kind": "color", "detail": "d", "satisfied": False, "bound": False},
                ],
            )
        ]
        assert correction_rate(rows, "color") == 0.5
        assert correction_rate(rows, "texture") is None


class TestSuiteExecution:
    def test_run_scene_repairs_a_corrupted_scene(self, tmp_path):
        scene = generate_suite(1, seed=5)[0]
        row = run_scene(
            scene,
            tmp_path / scene.scene_id,
            build_mock_suite(MockConfig()),
            JobOptions(refine_steps=8),
        )
        assert row["status"] in ("done", "partially_corrected")
        assert any(item["satisfied"] is False for item in row["pre"])
        assert all(item["satisfied"] is not False for item in row["post"])

    def test_run_suite_aggregates_clean_repairs(self, tmp_path):
        scenes = generate_suite(2, seed=9)
        report = run_suite(scenes, tmp_path, EvalConfig(seed=9, refine_steps=8))
        assert report["config"]["scenes"] == 2
        assert report["wall_seconds"] > 0
        agg = report["aggregates"]
        assert agg["errors"] == 0
        for kind in ("counting", "color", "texture", "shape", "spatial"):
            value = agg[f"post_{kind}"]
            assert value is None or value == 1.0

    def test_full_mask_hold_keeps_the_background_still(self, tmp_path):
        scenes = generate_suite(2, seed=9)
        report = run_suite(scenes, tmp_path, EvalConfig(seed=9, refine_steps=8, k_fraction=1.0))
        drift = background_deviation(tmp_path, report["rows"])
        assert drift["max_outside"] <= 1.0

    def test_run_ablations_writes_the_report_files(self, tmp_path):
        report = run_ablations(1, seed=13, out_dir=tmp_path)
        assert len(report["runs"]) == 8
        assert {run["name"] for run in report["runs"]} == {
            f"verifier_{v}-{s}-{n}"
            for v in ("on", "off")
            for s in ("serial", "parallel")
            for n in ("clean", "noisy")
        }
        assert [entry["k_fraction"] for entry in report["k_sweep"]] == [0.5, 0.75, 1.0]
        assert json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))["scenes"] == 1
        with (tmp_path / "report.csv").open(encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 11
        assert "post_color" in rows[0]
