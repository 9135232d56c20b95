"""Two-stage stitching: composite assembly and masked latent smoothing.

The smoothing tests drive refine() with a scripted refiner whose update
rule (double and add the step index) is simple enough to replay cell by
cell in plain Python; the replay is the oracle and agreement must be exact,
since both sides do the same float64 operations.
"""

from __future__ import annotations

import itertools
from dataclasses import replace

import numpy as np
import pytest

from scenefix.backends.base import LATENT_BLOCK, LatentTrajectory
from scenefix.backends.types import Image, ObjectMask
from scenefix.geometry import Box, relation_holds
from scenefix.loop import CORRECTED, FAILED, SubtaskResult, run_loop
from scenefix.stitching import (
    CompositeMask,
    RefineConfig,
    assemble,
    latent_bits_for,
    refine,
)

from conftest import make_world, registry_from_world, render_world

from test_loop import attr_subtask, spatial_subtask


def scene(world):
    return render_world(world), registry_from_world(world)


class TestLatentBits:
    def test_single_pixel_sets_one_cell(self):
        bits = np.zeros((16, 16), dtype=bool)
        bits[0, 0] = True
        cells = latent_bits_for(bits)
        assert cells.shape == (2, 2)
        assert cells.tolist() == [[True, False], [False, False]]

    def test_partial_edge_blocks(self):
        bits = np.zeros((13, 20), dtype=bool)
        bits[12, 19] = True
        cells = latent_bits_for(bits)
        assert cells.shape == (2, 3)
        assert cells[1, 2]
        assert int(cells.sum()) == 1

    def test_block_constant(self):
        assert LATENT_BLOCK == 8


class TestAssemble:
    def test_empty_results_leave_base_untouched(self, exact_suite, blue_star_world):
        image, registry = scene(blue_star_world)
        composite, mask = assemble(image, [], registry, exact_suite)
        assert np.array_equal(composite.pixels, image.pixels)
        assert mask.empty

    def test_non_corrected_results_are_skipped(self, exact_suite, blue_star_world):
        image, registry = scene(blue_star_world)
        failed = SubtaskResult("attr:color:star_1", "attribute", FAILED, 3, target_ref="star_1")
        composite, mask = assemble(image, [failed], registry, exact_suite)
        assert np.array_equal(composite.pixels, image.pixels)
        assert mask.empty

    def test_attribute_patch_pastes_back(self, exact_suite, blue_star_world):
        image, registry = scene(blue_star_world)
        result = run_loop(attr_subtask(), image, registry, exact_suite)
        composite, mask = assemble(image, [result], registry, exact_suite)
        assert tuple(composite.pixels[40, 40]) == (220, 40, 40)
        assert composite.world.objects[0].color == "red"
        expected = np.zeros((96, 96), dtype=bool)
        expected[30:54, 30:62] = True  # old footprint == new footprint here
        assert np.array_equal(mask.pixel_bits, expected)
        assert np.array_equal(mask.latent_bits, latent_bits_for(expected))

    def test_extra_masks_join_the_composite_mask(self, exact_suite, blue_star_world):
        image, registry = scene(blue_star_world)
        extra = np.zeros((96, 96), dtype=bool)
        extra[0:8, 0:8] = True
        composite, mask = assemble(image, [], registry, exact_suite, (ObjectMask(extra),))
        assert np.array_equal(composite.pixels, image.pixels)
        assert np.array_equal(mask.pixel_bits, extra)

    def test_last_patch_for_a_target_supersedes(self, exact_suite, blue_star_world):
        image, registry = scene(blue_star_world)

        def handmade(color):
            world = make_world(38, 28, [("star", "rectangle", color, "solid", (3, 2, 32, 24))])
            bits = np.zeros((28, 38), dtype=bool)
            bits[2:26, 3:35] = True
            return SubtaskResult(
                f"attr:color:star_1",
                "attribute",
                CORRECTED,
                1,
                target_ref="star_1",
                patch_image=render_world(world),
                patch_mask=ObjectMask(bits),
                patch_box=Box(27, 28, 38, 28),
            )

        composite, _ = assemble(image, [handmade("green"), handmade("red")], registry, exact_suite)
        assert tuple(composite.pixels[40, 40]) == (220, 40, 40)

    def test_placement_moves_the_object(self, exact_suite):
        world = make_world(
            200,
            200,
            [
                ("dog", "ellipse", "red", "solid", (150, 80, 30, 30)),
                ("cat", "ellipse", "blue", "solid", (60, 80, 30, 30)),
            ],
        )
        image, registry = scene(world)
        result = run_loop(spatial_subtask("dog_1", "left_of", "cat_1"), image, registry, exact_suite)
        composite, mask = assemble(image, [result], registry, exact_suite)

        # Old center is background, new center shows the dog.
        assert tuple(composite.pixels[95, 165]) == world.background
        assert tuple(composite.pixels[95, 40]) == (220, 40, 40)
        # Masked paste: the new box corner stays background.
        assert tuple(composite.pixels[80, 25]) == world.background
        dogs = [o for o in composite.world.objects if o.base_name == "dog"]
        assert dogs[0].box == Box(25, 80, 30, 30)
        assert relation_holds("left_of", dogs[0].box, Box(60, 80, 30, 30), 200, 200)

        old_bits = registry["dog_1"][1].bits
        assert mask.pixel_bits[old_bits].all()
        assert mask.pixel_bits[95, 40]

    def test_move_carries_attribute_patch_content(self, exact_suite):
        world = make_world(
            200,
            200,
            [
                ("dog", "ellipse", "blue", "solid", (150, 80, 30, 30)),
                ("cat", "ellipse", "green", "solid", (60, 80, 30, 30)),
            ],
        )
        image, registry = scene(world)
        recolored = run_loop(
            attr_subtask(base="dog", category="color", value="red"), image, registry, exact_suite
        )
        moved = run_loop(spatial_subtask("dog_1", "left_of", "cat_1"), image, registry, exact_suite)
        assert recolored.status == CORRECTED and moved.status == CORRECTED
        composite, _ = assemble(image, [recolored, moved], registry, exact_suite)
        dogs = [o for o in composite.world.objects if o.base_name == "dog"]
        assert dogs[0].color == "red"
        center = dogs[0].box
        assert tuple(composite.pixels[center.y + 15, center.x + 15]) == (220, 40, 40)
        assert relation_holds("left_of", center, Box(60, 80, 30, 30), 200, 200)

    def test_spatial_substitute_patches_the_region(self, exact_suite, blue_star_world):
        image, registry = scene(blue_star_world)
        view = Box(10, 10, 40, 20)
        replacement = render_world(make_world(40, 20, []))
        result = SubtaskResult(
            "spatial:star_1:left_of:cup_1",
            "spatial",
            CORRECTED,
            1,
            target_ref="star_1",
            patch_image=replacement,
            patch_box=view,
            substituted=True,
        )
        composite, mask = assemble(image, [result], registry, exact_suite)
        expected = np.zeros((96, 96), dtype=bool)
        expected[10:30, 10:50] = True
        assert np.array_equal(mask.pixel_bits, expected)
        assert np.array_equal(
            composite.pixels[10:30, 10:50], replacement.pixels
        )


class ScriptedRefiner:
    """Fixed trajectory; the step rule doubles the latent and adds the step
    index, so every intermediate value can be written down by hand."""

    def __init__(self, grids):
        self.grids = tuple(np.asarray(g, dtype=np.float64) for g in grids)
        self.decoded_input = None

    def invert(self, image, steps):
        return LatentTrajectory(
            steps=len(self.grids) - 1,
            grids=self.grids,
            image_w=image.width,
            image_h=image.height,
        )

    def step(self, latent, t):
        return latent * 2.0 + float(t)

    def decode(self, latent, trajectory):
        self.decoded_input = np.array(latent, copy=True)
        return Image(np.zeros((trajectory.image_h, trajectory.image_w, 3), dtype=np.uint8))


def walk_refine(grids, keep, steps, masked_steps, mask_from_start):
    """Cell-by-cell replay of the masked smoothing contract."""
    out = np.empty_like(grids[0])
    cells_h, cells_w = keep.shape
    for cy in range(cells_h):
        for cx in range(cells_w):
            for c in range(3):
                value = float(grids[0][cy, cx, c])
                for i in range(steps):
                    value = value * 2.0 + float(i)
                    masked = i < masked_steps if mask_from_start else i >= steps - masked_steps
                    if masked and not keep[cy, cx]:
                        value = float(grids[i + 1][cy, cx, c])
                out[cy, cx, c] = value
    return out


def scripted_grids():
    g0 = np.arange(12, dtype=np.float64).reshape(2, 2, 3)
    return (g0, g0 + 100.0, g0 + 200.0)


def mask_for(keep):
    pixel_bits = np.repeat(np.repeat(keep, LATENT_BLOCK, axis=0), LATENT_BLOCK, axis=1)
    return CompositeMask(pixel_bits, latent_bits_for(pixel_bits))


class TestRefineScripted:
    def composite(self):
        return Image(np.zeros((16, 16, 3), dtype=np.uint8))

    def test_hand_computed_case(self, exact_suite):
        keep = np.array([[True, False], [False, True]])
        refiner = ScriptedRefiner(scripted_grids())
        suite = replace(exact_suite, refiner=refiner)
        refine(self.composite(), mask_for(keep), RefineConfig(steps=2, masked_steps_override=1), suite)
        expected = np.array(
            [
                [[1.0, 5.0, 9.0], [207.0, 209.0, 211.0]],
                [[213.0, 215.0, 217.0], [37.0, 41.0, 45.0]],
            ]
        )
        assert np.array_equal(refiner.decoded_input, expected)

    def test_every_mask_pattern_matches_the_walk(self, exact_suite):
        grids = scripted_grids()
        for bits in itertools.product([False, True], repeat=4):
            keep = np.array(bits).reshape(2, 2)
            mask = mask_for(keep)
            assert np.array_equal(mask.latent_bits, keep)
            for masked_steps in (0, 1, 2):
                for from_start in (True, False):
                    refiner = ScriptedRefiner(grids)
                    suite = replace(exact_suite, refiner=refiner)
                    config = RefineConfig(
                        steps=2,
                        masked_steps_override=masked_steps,
                        mask_from_start=from_start,
                    )
                    refine(self.composite(), mask, config, suite)
                    oracle = walk_refine(grids, keep, 2, masked_steps, from_start)
                    assert np.array_equal(refiner.decoded_input, oracle), (
                        bits,
                        masked_steps,
                        from_start,
                    )

    def test_trace_marks_masked_steps(self, exact_suite):
        keep = np.zeros((2, 2), dtype=bool)
        refiner = ScriptedRefiner(tuple(np.zeros((2, 2, 3)) for _ in range(5)))
        suite = replace(exact_suite, refiner=refiner)
        _, trace = refine(
            self.composite(),
            mask_for(keep),
            RefineConfig(steps=4, masked_steps_override=3),
            suite,
        )
        assert [(e["step"], e["masked"]) for e in trace] == [
            (0, True),
            (1, True),
            (2, True),
            (3, False),
        ]
        refiner = ScriptedRefiner(tuple(np.zeros((2, 2, 3)) for _ in range(5)))
        suite = replace(exact_suite, refiner=refiner)
        _, trace = refine(
            self.composite(),
            mask_for(keep),
            RefineConfig(steps=4, masked_steps_override=3, mask_from_start=False),
            suite,
        )
        assert [e["masked"] for e in trace] == [False, True, True, True]

    def test_grid_count_mismatch_rejected(self, exact_suite):
        refiner = ScriptedRefiner(scripted_grids())  # 3 grids
        suite = replace(exact_suite, refiner=refiner)
        with pytest.raises(ValueError, match="grids"):
            refine(self.composite(), mask_for(np.ones((2, 2), bool)), RefineConfig(steps=4), suite)

    def test_latent_mask_shape_mismatch_rejected(self, exact_suite):
        refiner = ScriptedRefiner(scripted_grids())
        suite = replace(exact_suite, refiner=refiner)
        bad = CompositeMask(np.zeros((16, 16), dtype=bool), np.zeros((3, 3), dtype=bool))
        with pytest.raises(ValueError, match="latent mask"):
            refine(self.composite(), bad, RefineConfig(steps=2), suite)


class TestRefineConfig:
    def test_masked_steps_from_fraction(self):
        assert RefineConfig(steps=40, k_fraction=0.75).masked_steps == 30
        assert RefineConfig(steps=8, k_fraction=0.75).masked_steps == 6
        assert RefineConfig(steps=40, k_fraction=1.0).masked_steps == 40
        assert RefineConfig(steps=40, k_fraction=0.0).masked_steps == 0

    def test_override_wins(self):
        assert RefineConfig(steps=40, masked_steps_override=5).masked_steps == 5

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            RefineConfig(steps=4, masked_steps_override=5).masked_steps


class TestRefineWithMock:
    def corrupted_composite(self, exact_suite):
        world = make_world(96, 96, [("star", "rectangle", "blue", "solid", (30, 30, 32, 24))])
        image, registry = scene(world)
        result = run_loop(attr_subtask(), image, registry, exact_suite)
        return assemble(image, [result], registry, exact_suite)

    def test_full_masking_preserves_off_mask_pixels(self, exact_suite):
        composite, mask = self.corrupted_composite(exact_suite)
        refined, trace = refine(composite, mask, RefineConfig(steps=8, k_fraction=1.0), exact_suite)
        assert sum(e["masked"] for e in trace) == 8
        dilated = np.repeat(
            np.repeat(mask.latent_bits, LATENT_BLOCK, axis=0), LATENT_BLOCK, axis=1
        )[: composite.height, : composite.width]
        diff = np.abs(
            refined.pixels.astype(np.int16) - composite.pixels.astype(np.int16)
        ).max(axis=2)
        assert diff[~dilated].max() <= 1

    def test_unmasked_run_drifts(self, exact_suite):
        composite, mask = self.corrupted_composite(exact_suite)
        refined, trace = refine(composite, mask, RefineConfig(steps=8, k_fraction=0.0), exact_suite)
        assert sum(e["masked"] for e in trace) == 0
        assert not np.array_equal(refined.pixels, composite.pixels)

    def test_refined_keeps_world(self, exact_suite):
        composite, mask = self.corrupted_composite(exact_suite)
        refined, _ = refine(composite, mask, RefineConfig(steps=4, k_fraction=1.0), exact_suite)
        assert refined.world == composite.world
