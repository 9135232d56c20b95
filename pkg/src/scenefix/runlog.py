"""Per-job persistence: content-addressed artifacts and an append-only log.

Artifacts are stored flat under one directory, named by the sha256 of their
bytes, so identical content dedupes and references stay valid across
re-runs. Images keep their scene annotation in a sidecar next to the blob.
The run log is a JSONL file; every entry gets a wall-clock timestamp, and
appends are atomic enough for concurrent subtask loops (single write under
a lock, flushed per line).
"""
from __future__ import annotations

import json
import os
import threading
import time
from pathlib import Path

from .backends.types import Image, content_hash, decode_png, encode_png
from .backends.world import world_from_json, world_to_json


def write_json_atomic(path: Path, payload: dict) -> None:
    """Rewrite a JSON file so readers never observe a half-written state."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


class ArtifactStore:
    """Flat directory of sha256-named blobs."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put_bytes(self, data: bytes, suffix: str) -> str:
        digest = content_hash(data)
        target = self.root / f"{digest}{suffix}"
        if not target.exists():
            tmp = target.with_name(f".{target.name}.{os.getpid()}.{threading.get_ident()}.tmp")
            tmp.write_bytes(data)
            os.replace(tmp, target)
        return digest

    def put_image(self, image: Image) -> str:
        digest = self.put_bytes(encode_png(image), ".png")
        if image.world is not None:
            sidecar = self.root / f"{digest}.world.json"
            if not sidecar.exists():
                write_json_atomic(sidecar, world_to_json(image.world))
        return digest

    def put_json(self, payload: dict) -> str:
        data = json.dumps(payload, indent=2, sort_keys=True).encode("utf-8")
        return self.put_bytes(data, ".json")

    def path_for(self, digest: str) -> Path | None:
        for entry in sorted(self.root.glob(f"{digest}*")):
            if entry.name.endswith(".world.json"):
                continue
            if entry.stem == digest:
                return entry
        return None

    def open_bytes(self, digest: str) -> bytes:
        path = self.path_for(digest)
        if path is None:
            raise KeyError(f"no artifact {digest}")
        return path.read_bytes()

    def get_image(self, digest: str) -> Image:
        image = decode_png(self.open_bytes(digest))
        sidecar = self.root / f"{digest}.world.json"
        if sidecar.exists():
            world = world_from_json(json.loads(sidecar.read_text(encoding="utf-8")))
            image = image.with_world(world)
        return image

    def get_json(self, digest: str) -> dict:
        return json.loads(self.open_bytes(digest).decode("utf-8"))


class RunLog:
    """Append-only JSONL event stream for one job."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, kind: str, **payload) -> dict:
        entry = {"ts": round(time.time(), 6), "kind": kind, **payload}
        line = json.dumps(entry, sort_keys=True, default=_fallback)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        return entry

    def entries(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line:
                out.append(json.loads(line))
        return out


def _fallback(value):
    if hasattr(value, "as_tuple"):
        return list(value.as_tuple())
    if isinstance(value, (set, tuple)):
        return list(value)
    return str(value)
