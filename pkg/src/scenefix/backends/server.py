"""Serve a local backend suite over the capability wire protocol.

This is the counterpart of remote.py: frames arrive once as PNG blobs and
are referenced by hash afterwards; latents travel as base64 float64 buffers;
trajectories stay server-side behind an id so decode can reuse the stored
residual. Pixel-pure capabilities round-trip exactly. Capabilities that
lean on the mock's scene annotation (spatial VLM answers, edits) degrade
the same way they do for bare rasters locally, since PNG transport carries
pixels only.
"""
from __future__ import annotations

import base64
import threading

import numpy as np
from fastapi import Body, FastAPI, Request
from fastapi.responses import JSONResponse

from ..geometry import Box
from .base import BackendSuite, LatentTrajectory
from .types import (
    BackendError,
    EmptyMask,
    Image,
    InvalidImage,
    NoFeasiblePlacement,
    decode_mask_png,
    decode_png,
    encode_mask_png,
    encode_png,
    image_hash,
)

_ERROR_CODES = {
    EmptyMask: ("empty_mask", 409),
    NoFeasiblePlacement: ("no_feasible_placement", 409),
    InvalidImage: ("invalid_image", 400),
}


def create_backend_app(suite: BackendSuite) -> FastAPI:
    app = FastAPI(title="scene correction model server")
    blobs: dict[str, Image] = {}
    trajectories: dict[str, LatentTrajectory] = {}
    lock = threading.Lock()

    def fetch(digest: str) -> Image:
        with lock:
            image = blobs.get(digest)
        if image is None:
            raise InvalidImage(f"unknown blob {digest}")
        return image

    @app.exception_handler(BackendError)
    def backend_error(_, exc: BackendError) -> JSONResponse:
        code, status = _ERROR_CODES.get(type(exc), ("backend_error", 400))
        return JSONResponse({"error": code, "message": str(exc)}, status_code=status)

    @app.post("/v1/blobs")
    async def put_blob(request: Request) -> dict:
        data = await request.body()
        image = decode_png(data)
        digest = image_hash(image)
        with lock:
            blobs[digest] = image
        return {"hash": digest}

    @app.post("/v1/llm")
    def llm(payload: dict = Body(...)) -> dict:
        return {"text": suite.llm_complete(str(payload["prompt"]))}

    @app.post("/v1/vlm")
    def vlm(payload: dict = Body(...)) -> dict:
        image = fetch(payload["image"])
        return {"answer": suite.vlm_query(image, str(payload["question"]))}

    @app.post("/v1/detect")
    def detect(payload: dict = Body(...)) -> dict:
        image = fetch(payload["image"])
        detections = suite.detect(image, str(payload["label"]))
        return {
            "detections": [
                {"label": d.label, "box": list(d.box.as_tuple()), "score": d.score}
                for d in detections
            ]
        }

    @app.post("/v1/segment")
    def segment(payload: dict = Body(...)) -> dict:
        image = fetch(payload["image"])
        mask = suite.segment(image, Box(*payload["box"]))
        return {"mask": base64.b64encode(encode_mask_png(mask)).decode("ascii")}

    @app.post("/v1/inpaint")
    def inpaint(payload: dict = Body(...)) -> dict:
        image = fetch(payload["image"])
        mask = decode_mask_png(base64.b64decode(payload["mask"]))
        result = suite.inpaint_remove(image, mask)
        return {"image": base64.b64encode(encode_png(result)).decode("ascii")}

    @app.post("/v1/edit")
    def edit(payload: dict = Body(...)) -> dict:
        image = fetch(payload["image"])
        result = suite.edit(image, str(payload["instruction"]), int(payload.get("seed", 0)))
        return {"image": base64.b64encode(encode_png(result)).decode("ascii")}

    @app.post("/v1/propose_box")
    def propose_box(payload: dict = Body(...)) -> dict:
        existing = [Box(*item) for item in payload.get("existing", [])]
        canvas = tuple(payload["canvas"])
        box = suite.propose_box(str(payload["description"]), existing, canvas)
        return {"box": list(box.as_tuple())}

    @app.post("/v1/generate")
    def generate(payload: dict = Body(...)) -> dict:
        result = suite.generate_object(str(payload["description"]), Box(*payload["box"]))
        return {"image": base64.b64encode(encode_png(result)).decode("ascii")}

    @app.post("/v1/refine/invert")
    def refine_invert(payload: dict = Body(...)) -> dict:
        image = fetch(payload["image"])
        steps = int(payload["steps"])
        trajectory = suite.refine_invert(image, steps)
        handle = f"{payload['image']}:{steps}"
        with lock:
            trajectories[handle] = trajectory
        grids = [
            base64.b64encode(np.ascontiguousarray(g, dtype=np.float64).tobytes()).decode("ascii")
            for g in trajectory.grids
        ]
        cells = [trajectory.grids[0].shape[0], trajectory.grids[0].shape[1]]
        return {"grids": grids, "cells": cells, "trajectory_id": handle}

    @app.post("/v1/refine/step")
    def refine_step(payload: dict = Body(...)) -> dict:
        cells = payload["cells"]
        latent = np.frombuffer(base64.b64decode(payload["latent"]), dtype=np.float64)
        latent = latent.reshape(cells[0], cells[1], 3).copy()
        stepped = suite.refine_step(latent, int(payload["t"]))
        return {
            "latent": base64.b64encode(
                np.ascontiguousarray(stepped, dtype=np.float64).tobytes()
            ).decode("ascii")
        }

    @app.post("/v1/refine/decode")
    def refine_decode(payload: dict = Body(...)) -> dict:
        handle = payload.get("trajectory_id")
        with lock:
            trajectory = trajectories.get(handle)
        if trajectory is None:
            raise InvalidImage(f"unknown trajectory {handle!r}")
        cells = payload["cells"]
        latent = np.frombuffer(base64.b64decode(payload["latent"]), dtype=np.float64)
        latent = latent.reshape(cells[0], cells[1], 3).copy()
        result = suite.refine_decode(latent, trajectory)
        return {"image": base64.b64encode(encode_png(result)).decode("ascii")}

    return app
