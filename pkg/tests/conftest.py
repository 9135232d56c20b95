"""Shared fixtures and tiny-world builders.

Most tests run against a handful of small annotated scenes rather than the
full synthetic suite. Nouns are chosen for the shape their name hashes to:
``box``, ``cup``, ``star``, ``stone``, and ``frog`` raster as full
rectangles, which keeps pixel arithmetic exact, while ``ball``, ``dog``,
and ``cat`` are ellipses.
"""

from __future__ import annotations

import pytest

from scenefix.backends import build_mock_suite
from scenefix.backends.mock import MockConfig
from scenefix.backends.types import ObjectMask
from scenefix.backends.world import (
    WorldObject,
    WorldState,
    object_raster,
    render,
    visible_area,
)
from scenefix.geometry import Box


def make_world(frame_w, frame_h, objects, background=None):
    specs = []
    for base_name, shape, color, texture, box in objects:
        specs.append(
            WorldObject(
                base_name=base_name,
                shape=shape,
                color=color,
                texture=texture,
                box=Box(*box),
            )
        )
    if background is None:
        return WorldState(frame_w=frame_w, frame_h=frame_h, objects=tuple(specs))
    return WorldState(
        frame_w=frame_w,
        frame_h=frame_h,
        objects=tuple(specs),
        background=background,
    )


def registry_from_world(world):
    """Bind world objects to display names by detection rank.

    Mirrors how counting binds geometry: per base name, largest visible
    area first, ties broken left to right then top to bottom, ids issued
    from 1 upward.
    """

    by_base: dict[str, list[WorldObject]] = {}
    for obj in world.objects:
        by_base.setdefault(obj.base_name, []).append(obj)
    registry = {}
    for base_name, members in by_base.items():
        ranked = sorted(
            members,
            key=lambda o: (-visible_area(o, world), o.box.x, o.box.y),
        )
        for index, obj in enumerate(ranked, start=1):
            bits = object_raster(obj, world.frame_h, world.frame_w)
            registry[f"{base_name}_{index}"] = (obj.box, ObjectMask(bits))
    return registry


def render_world(world):
    return render(world)


@pytest.fixture
def exact_suite():
    """A mock suite with no injected noise and no latency."""

    return build_mock_suite(MockConfig())


@pytest.fixture
def blue_star_world():
    """One rectangle-shaped star, painted blue; tests recolor it to red."""

    return make_world(96, 96, [("star", "rectangle", "blue", "solid", (30, 30, 32, 24))])
