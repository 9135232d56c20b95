"""Model capability layer: gateway, the flat-shape mock suite, and HTTP
adapters for talking to remote model servers."""
from .base import (
    DEFAULT_PER_BACKEND_CONCURRENCY,
    LATENT_BLOCK,
    BackendSuite,
    LatentTrajectory,
    crop,
    paste,
    scale,
    scale_mask,
    sort_detections,
)
from .mock import FlatShapeMock, MockConfig, build_mock_suite, describe_spec, parse_description
from .types import (
    BackendError,
    BackendUnavailable,
    DetectionBox,
    EmptyMask,
    Image,
    InvalidImage,
    MalformedLLMOutput,
    NoFeasiblePlacement,
    ObjectMask,
    UnparseableLLMOutput,
    UnparseableVerdict,
    blank_image,
    content_hash,
    decode_mask_png,
    decode_png,
    encode_mask_png,
    encode_png,
    image_hash,
)
from .world import WorldObject, WorldState, render, world_from_json, world_to_json


def suite_from_config(config: dict) -> BackendSuite:
    """Build a suite from a backends config mapping.

    {"mode": "mock", "mock": {"eps_vlm": 0.2, ...}} or
    {"mode": "remote", "remote": {"base_url": "http://...", "retries": 2}}.
    """
    mode = config.get("mode", "mock")
    if mode == "mock":
        return build_mock_suite(MockConfig(**config.get("mock", {})))
    if mode == "remote":
        from .remote import build_remote_suite

        remote = dict(config.get("remote", {}))
        base_url = remote.pop("base_url", None)
        if not base_url:
            raise ValueError("remote mode needs remote.base_url")
        return build_remote_suite(base_url, **remote)
    raise ValueError(f"unknown backends mode {mode!r}")


__all__ = [
    "BackendError",
    "BackendSuite",
    "BackendUnavailable",
    "DEFAULT_PER_BACKEND_CONCURRENCY",
    "DetectionBox",
    "EmptyMask",
    "FlatShapeMock",
    "Image",
    "InvalidImage",
    "LATENT_BLOCK",
    "LatentTrajectory",
    "MalformedLLMOutput",
    "MockConfig",
    "NoFeasiblePlacement",
    "ObjectMask",
    "UnparseableLLMOutput",
    "UnparseableVerdict",
    "WorldObject",
    "WorldState",
    "blank_image",
    "build_mock_suite",
    "content_hash",
    "crop",
    "decode_mask_png",
    "decode_png",
    "describe_spec",
    "encode_mask_png",
    "encode_png",
    "image_hash",
    "parse_description",
    "paste",
    "render",
    "scale",
    "scale_mask",
    "sort_detections",
    "suite_from_config",
    "world_from_json",
    "world_to_json",
]
