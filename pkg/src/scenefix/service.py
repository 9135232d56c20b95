"""HTTP front for the orchestrator.

Jobs are submitted as multipart uploads (a PNG frame or a scene JSON that
renders to one), run on a background thread, and observed through the job
record, the run log, content-addressed artifacts, and a server-sent event
stream that emits a status snapshot whenever the record changes. Review
actions resolve parked candidates; errors surface as JSON with a stable
code field.
"""
from __future__ import annotations

import asyncio
import json
import threading

from fastapi import FastAPI, Form, HTTPException, Request, UploadFile
from fastapi.responses import FileResponse, PlainTextResponse, StreamingResponse

from .backends.types import InvalidImage, decode_png
from .backends.world import render, world_from_json
from .orchestrator import (
    TERMINAL,
    IterationBudgetExhausted,
    JobOptions,
    NoPendingCandidate,
    Orchestrator,
)

EVENT_POLL_SECONDS = 0.2
EVENT_HEARTBEAT_SECONDS = 10.0


def create_app(orchestrator: Orchestrator) -> FastAPI:
    app = FastAPI(title="scene correction service")
    app.state.orchestrator = orchestrator
    running: set[str] = set()
    running_lock = threading.Lock()

    def launch(job_id: str) -> None:
        """Run a job on a worker thread, once, resuming if it was interrupted."""
        with running_lock:
            if job_id in running:
                return
            running.add(job_id)

        def work():
            try:
                orchestrator.run(job_id)
            finally:
                with running_lock:
                    running.discard(job_id)

        threading.Thread(target=work, daemon=True).start()

    def fail(status: int, code: str, message: str) -> HTTPException:
        return HTTPException(status_code=status, detail={"code": code, "message": message})

    def load_or_404(job_id: str):
        try:
            return orchestrator.load(job_id)
        except KeyError:
            raise fail(404, "job_not_found", f"no job {job_id}") from None

    def job_view(record) -> dict:
        view = record.to_json()
        view["pending_reviews"] = orchestrator.pending_reviews(record.job_id)
        return view

    @app.post("/jobs")
    async def submit_job(
        image: UploadFile,
        description: str = Form(...),
        options: str = Form(default="{}"),
    ) -> dict:
        if not description.strip():
            raise fail(422, "validation_failed", "description is empty")
        try:
            opts = JobOptions.from_json(json.loads(options or "{}"))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise fail(422, "validation_failed", f"bad options: {exc}") from None

        payload = await image.read()
        try:
            frame = _load_frame(payload, image.filename or "")
        except (InvalidImage, ValueError, KeyError) as exc:
            raise fail(400, "invalid_image", str(exc)) from None

        record = orchestrator.submit(frame, description, opts)
        if record.status not in TERMINAL:
            launch(record.job_id)
        return job_view(record)

    @app.get("/jobs")
    def list_jobs() -> list[dict]:
        return [record.to_json() for record in orchestrator.list_jobs()]

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str) -> dict:
        return job_view(load_or_404(job_id))

    @app.get("/jobs/{job_id}/log")
    def get_log(job_id: str) -> PlainTextResponse:
        load_or_404(job_id)
        path = orchestrator.job_dir(job_id) / "runlog.jsonl"
        text = path.read_text(encoding="utf-8") if path.exists() else ""
        return PlainTextResponse(text, media_type="application/x-ndjson")

    @app.get("/artifacts/{digest}")
    def get_artifact(digest: str) -> FileResponse:
        path = orchestrator.artifact_path(digest)
        if path is None:
            raise fail(404, "artifact_not_found", f"no artifact {digest}")
        media = "image/png" if path.suffix == ".png" else "application/json"
        return FileResponse(path, media_type=media)

    @app.post("/jobs/{job_id}/subtasks/{subtask_id}/review")
    async def review(job_id: str, subtask_id: str, request: Request) -> dict:
        load_or_404(job_id)
        action = None
        upload = None
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            action = form.get("action")
            upload = form.get("image")
        else:
            try:
                body = await request.json()
            except json.JSONDecodeError:
                body = {}
            action = body.get("action")
        if not action:
            raise fail(422, "validation_failed", "review action is required")

        image = None
        if upload is not None:
            try:
                image = decode_png(await upload.read())
            except InvalidImage as exc:
                raise fail(400, "invalid_image", str(exc)) from None

        try:
            return orchestrator.review_action(job_id, subtask_id, str(action), image)
        except NoPendingCandidate as exc:
            raise fail(409, "no_pending_candidate", str(exc)) from None
        except IterationBudgetExhausted as exc:
            raise fail(409, "iteration_budget_exhausted", str(exc)) from None
        except ValueError as exc:
            raise fail(422, "validation_failed", str(exc)) from None

    @app.get("/jobs/{job_id}/events")
    async def events(job_id: str, request: Request) -> StreamingResponse:
        load_or_404(job_id)

        async def stream():
            last = None
            idle = 0.0
            while True:
                if await request.is_disconnected():
                    return
                record = orchestrator.load(job_id)
                snapshot = json.dumps(job_view(record), sort_keys=True)
                if snapshot != last:
                    last = snapshot
                    idle = 0.0
                    yield f"event: status\ndata: {snapshot}\n\n"
                    if record.status in ("done", "partially_corrected", "error"):
                        return
                await asyncio.sleep(EVENT_POLL_SECONDS)
                idle += EVENT_POLL_SECONDS
                if idle >= EVENT_HEARTBEAT_SECONDS:
                    idle = 0.0
                    yield ": heartbeat\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app


def _load_frame(payload: bytes, filename: str):
    """A job input is either a PNG frame or a scene JSON to render."""
    stripped = payload.lstrip()
    if filename.endswith(".json") or stripped.startswith(b"{"):
        world = world_from_json(json.loads(payload.decode("utf-8")))
        return render(world)
    return decode_png(payload)
