"""HTTP adapters: each capability proxied to a model server.

Requests reference frames by content hash; the blob is uploaded once per
client and reused. Responses carry images and masks as base64 PNG. Every
call retries transient failures (connection errors and 5xx) a bounded
number of times before raising BackendUnavailable; structured error bodies
map back onto the gateway's exception types.
"""
from __future__ import annotations

import base64
import time

import httpx
import numpy as np

from ..geometry import Box
from .base import BackendSuite, LatentTrajectory
from .types import (
    BackendError,
    BackendUnavailable,
    DetectionBox,
    EmptyMask,
    Image,
    NoFeasiblePlacement,
    ObjectMask,
    decode_mask_png,
    decode_png,
    encode_mask_png,
    encode_png,
    image_hash,
)

DEFAULT_RETRIES = 2
RETRY_DELAY_SECONDS = 0.2

_ERROR_TYPES = {
    "empty_mask": EmptyMask,
    "no_feasible_placement": NoFeasiblePlacement,
}


class RemoteClient:
    """Shared transport: one httpx client, one blob cache, bounded retries."""

    def __init__(
        self,
        base_url: str,
        client: httpx.Client | None = None,
        retries: int = DEFAULT_RETRIES,
        timeout: float = 30.0,
    ):
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)
        self.retries = retries
        self._uploaded: set[str] = set()

    def close(self) -> None:
        self._client.close()

    def upload(self, image: Image) -> str:
        digest = image_hash(image)
        if digest in self._uploaded:
            return digest
        response = self._request(
            "POST",
            "/v1/blobs",
            content=encode_png(image),
            headers={"content-type": "image/png"},
        )
        digest = response.json()["hash"]
        self._uploaded.add(digest)
        return digest

    def post(self, path: str, payload: dict) -> dict:
        return self._request("POST", path, json=payload).json()

    def _request(self, method: str, path: str, **kwargs) -> httpx.Response:
        url = self.base_url + path
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                response = self._client.request(method, url, **kwargs)
            except httpx.HTTPError as exc:
                last = exc
                time.sleep(RETRY_DELAY_SECONDS * (attempt + 1))
                continue
            if response.status_code >= 500:
                last = BackendUnavailable(f"{url} -> {response.status_code}")
                time.sleep(RETRY_DELAY_SECONDS * (attempt + 1))
                continue
            if response.status_code >= 400:
                raise self._map_error(response)
            return response
        raise BackendUnavailable(f"{url} unreachable after {self.retries + 1} attempts: {last}")

    @staticmethod
    def _map_error(response: httpx.Response) -> BackendError:
        try:
            body = response.json()
        except ValueError:
            body = {}
        detail = body.get("detail", body) if isinstance(body, dict) else {}
        code = detail.get("error") or detail.get("code") or ""
        message = detail.get("message") or response.text[:200]
        exc_type = _ERROR_TYPES.get(code, BackendError)
        return exc_type(f"{response.status_code}: {message}")


def _png_b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _image_from_b64(text: str) -> Image:
    return decode_png(base64.b64decode(text))


def _mask_from_b64(text: str) -> ObjectMask:
    return decode_mask_png(base64.b64decode(text))


def _grid_to_b64(grid: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(grid, dtype=np.float64).tobytes()).decode("ascii")


def _grid_from_b64(text: str, cells: tuple[int, int]) -> np.ndarray:
    flat = np.frombuffer(base64.b64decode(text), dtype=np.float64)
    return flat.reshape(cells[0], cells[1], 3).copy()


class RemoteLLM:
    def __init__(self, client: RemoteClient):
        self.client = client

    def complete(self, prompt: str) -> str:
        return self.client.post("/v1/llm", {"prompt": prompt})["text"]


class RemoteVLM:
    def __init__(self, client: RemoteClient):
        self.client = client

    def query(self, image: Image, question: str) -> str:
        return self.client.post(
            "/v1/vlm", {"image": self.client.upload(image), "question": question}
        )["answer"]


class RemoteDetector:
    def __init__(self, client: RemoteClient):
        self.client = client

    def detect(self, image: Image, label: str) -> list[DetectionBox]:
        body = self.client.post(
            "/v1/detect", {"image": self.client.upload(image), "label": label}
        )
        return [
            DetectionBox(item["label"], Box(*item["box"]), float(item["score"]))
            for item in body["detections"]
        ]


class RemoteSegmenter:
    def __init__(self, client: RemoteClient):
        self.client = client

    def segment(self, image: Image, box: Box) -> ObjectMask:
        body = self.client.post(
            "/v1/segment", {"image": self.client.upload(image), "box": list(box.as_tuple())}
        )
        return _mask_from_b64(body["mask"])


class RemoteInpainter:
    def __init__(self, client: RemoteClient):
        self.client = client

    def remove(self, image: Image, mask: ObjectMask) -> Image:
        body = self.client.post(
            "/v1/inpaint",
            {"image": self.client.upload(image), "mask": _png_b64(encode_mask_png(mask))},
        )
        return _image_from_b64(body["image"])


class RemoteEditor:
    def __init__(self, client: RemoteClient):
        self.client = client

    def edit(self, image: Image, instruction: str, seed: int) -> Image:
        body = self.client.post(
            "/v1/edit",
            {"image": self.client.upload(image), "instruction": instruction, "seed": seed},
        )
        return _image_from_b64(body["image"])


class RemoteLayout:
    def __init__(self, client: RemoteClient):
        self.client = client

    def propose_box(self, description: str, existing: list[Box], canvas: tuple[int, int]) -> Box:
        body = self.client.post(
            "/v1/propose_box",
            {
                "description": description,
                "existing": [list(b.as_tuple()) for b in existing],
                "canvas": list(canvas),
            },
        )
        return Box(*body["box"])


class RemoteGenerator:
    def __init__(self, client: RemoteClient):
        self.client = client

    def generate(self, description: str, box: Box) -> Image:
        body = self.client.post(
            "/v1/generate", {"description": description, "box": list(box.as_tuple())}
        )
        return _image_from_b64(body["image"])


class RemoteRefiner:
    def __init__(self, client: RemoteClient):
        self.client = client

    def invert(self, image: Image, steps: int) -> LatentTrajectory:
        body = self.client.post(
            "/v1/refine/invert", {"image": self.client.upload(image), "steps": steps}
        )
        cells = tuple(body["cells"])
        grids = tuple(_grid_from_b64(text, cells) for text in body["grids"])
        return LatentTrajectory(
            steps=steps,
            grids=grids,
            image_w=image.width,
            image_h=image.height,
            handle=body.get("trajectory_id"),
        )

    def step(self, latent: np.ndarray, t: int) -> np.ndarray:
        body = self.client.post(
            "/v1/refine/step",
            {
                "latent": _grid_to_b64(latent),
                "cells": [latent.shape[0], latent.shape[1]],
                "t": t,
            },
        )
        return _grid_from_b64(body["latent"], (latent.shape[0], latent.shape[1]))

    def decode(self, latent: np.ndarray, trajectory: LatentTrajectory) -> Image:
        body = self.client.post(
            "/v1/refine/decode",
            {
                "latent": _grid_to_b64(latent),
                "cells": [latent.shape[0], latent.shape[1]],
                "trajectory_id": trajectory.handle,
            },
        )
        return _image_from_b64(body["image"])


def build_remote_suite(
    base_url: str,
    client: httpx.Client | None = None,
    retries: int = DEFAULT_RETRIES,
    timeout: float = 30.0,
) -> BackendSuite:
    """All nine capabilities against one model server."""
    shared = RemoteClient(base_url, client=client, retries=retries, timeout=timeout)
    return BackendSuite(
        llm=RemoteLLM(shared),
        vlm=RemoteVLM(shared),
        detector=RemoteDetector(shared),
        segmenter=RemoteSegmenter(shared),
        inpainter=RemoteInpainter(shared),
        editor=RemoteEditor(shared),
        layout_generator=RemoteLayout(shared),
        object_generator=RemoteGenerator(shared),
        refiner=RemoteRefiner(shared),
    )
