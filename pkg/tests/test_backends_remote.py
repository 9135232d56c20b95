"""Remote adapters against an in-process model server.

The server wraps a mock suite; a second, local mock suite gives the
reference answers. Anything the PNG transport preserves (pixels, latents,
text) must come back identical. Scene annotations do not survive the wire,
so parity is checked on the annotation-free paths.
"""

from __future__ import annotations

import numpy as np
import pytest
from fastapi import FastAPI, Response
from fastapi.testclient import TestClient

from scenefix.backends import build_mock_suite
from scenefix.backends.mock import MockConfig
from scenefix.backends.remote import RemoteClient, build_remote_suite
from scenefix.backends.server import create_backend_app
from scenefix.backends.types import (
    BackendError,
    BackendUnavailable,
    EmptyMask,
    Image,
    NoFeasiblePlacement,
)
from scenefix.geometry import Box

from conftest import make_world, render_world


class Recorder:
    """Pass-through transport that remembers request paths."""

    def __init__(self, inner):
        self.inner = inner
        self.paths = []

    def request(self, method, url, **kwargs):
        self.paths.append(url)
        return self.inner.request(method, url, **kwargs)

    def close(self):
        self.inner.close()


@pytest.fixture
def stack():
    server_suite = build_mock_suite(MockConfig())
    local_suite = build_mock_suite(MockConfig())
    transport = Recorder(TestClient(create_backend_app(server_suite)))
    remote_suite = build_remote_suite("http://model", client=transport)
    return local_suite, remote_suite, transport


def bare_star():
    world = make_world(64, 48, [("star", "rectangle", "blue", "solid", (10, 10, 24, 16))])
    return Image(render_world(world).pixels.copy())


class TestParity:
    def test_segment(self, stack):
        local, remote, _ = stack
        image = bare_star()
        box = Box(10, 10, 24, 16)
        assert np.array_equal(remote.segment(image, box).bits, local.segment(image, box).bits)

    def test_inpaint(self, stack):
        local, remote, _ = stack
        image = bare_star()
        mask = local.segment(image, Box(10, 10, 24, 16))
        assert np.array_equal(
            remote.inpaint_remove(image, mask).pixels,
            local.inpaint_remove(image, mask).pixels,
        )

    def test_vlm_attribute(self, stack):
        local, remote, _ = stack
        image = bare_star()
        question = "What is the color of the star?"
        assert remote.vlm_query(image, question) == local.vlm_query(image, question)

    def test_llm_judge(self, stack):
        _, remote, _ = stack
        assert remote.llm_judge("blue", "The star is blue.") is True
        assert remote.llm_judge("blue", "The star is red.") is False

    def test_propose_box(self, stack):
        local, remote, _ = stack
        existing = [Box(0, 0, 20, 20)]
        assert remote.propose_box("a cup", existing, (60, 20)) == local.propose_box(
            "a cup", existing, (60, 20)
        )

    def test_generate_pixels(self, stack):
        local, remote, _ = stack
        box = Box(0, 0, 40, 30)
        remote_img = remote.generate_object("a red star", box)
        local_img = local.generate_object("a red star", box)
        assert np.array_equal(remote_img.pixels, local_img.pixels)
        assert remote_img.world is None  # annotations stay server-side

    def test_refiner_round_trip(self, stack):
        local, remote, _ = stack
        image = bare_star()
        remote_traj = remote.refine_invert(image, steps=3)
        local_traj = local.refine_invert(image, steps=3)
        assert remote_traj.steps == 3
        assert len(remote_traj.grids) == 4
        for a, b in zip(remote_traj.grids, local_traj.grids):
            assert np.array_equal(a, b)

        stepped_remote = remote.refine_step(remote_traj.grids[0], 0)
        stepped_local = local.refine_step(local_traj.grids[0], 0)
        assert np.array_equal(stepped_remote, stepped_local)

        decoded_remote = remote.refine_decode(remote_traj.grids[-1], remote_traj)
        assert np.array_equal(decoded_remote.pixels, image.pixels)


class TestTransport:
    def test_blob_uploaded_once(self, stack):
        _, remote, transport = stack
        image = bare_star()
        remote.vlm_query(image, "What is the color of the star?")
        remote.vlm_query(image, "What is the texture of the star?")
        assert transport.paths.count("http://model/v1/blobs") == 1

    def test_error_mapping_empty_mask(self, stack):
        _, remote, _ = stack
        blank = Image(np.full((32, 32, 3), 243, dtype=np.uint8))
        with pytest.raises(EmptyMask):
            remote.segment(blank, Box(0, 0, 8, 8))

    def test_error_mapping_no_feasible_placement(self, stack):
        _, remote, _ = stack
        with pytest.raises(NoFeasiblePlacement):
            remote.propose_box("a cup", [Box(0, 0, 10, 10)], (10, 10))

    def test_error_mapping_plain_backend_error(self, stack):
        _, remote, _ = stack
        with pytest.raises(BackendError):
            remote.edit(bare_star(), "Make the star red.", seed=0)

    def test_server_failure_exhausts_retries(self):
        flaky = FastAPI()
        hits = []

        @flaky.post("/v1/llm")
        def llm():
            hits.append(1)
            return Response(status_code=503)

        client = RemoteClient("http://model", client=TestClient(flaky), retries=1)
        with pytest.raises(BackendUnavailable):
            client._request("POST", "/v1/llm", json={"prompt": "hi"})
        assert len(hits) == 2
