"""Job lifecycle around the correction pipeline.

A job owns one directory: job.json (atomically rewritten state),
runlog.jsonl (append-only event stream, every backend call included), and
artifacts/ (content-addressed blobs). Execution walks the phase ladder

    pending -> counting -> correcting -> stitching -> done

with awaiting_review interleaved into correcting when a review gate parks a
candidate, and partially_corrected or error as the other terminal states.
Each phase persists its outputs before the status advances, so a crashed
run resumes at the last completed phase and never re-runs a finished
subtask.

Job ids are content-addressed from input image, description, and options,
which makes submission idempotent.
"""
from __future__ import annotations

import json
import threading
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .backends import base as gateway
from .backends.base import BackendSuite
from .backends.types import (
    Image,
    NoFeasiblePlacement,
    ObjectMask,
    content_hash,
    decode_mask_png,
    encode_mask_png,
    encode_png,
)
from .counting import GeometryMap, apply_counting, plan_counting, segment_or_box
from .decomposer import decompose
from .geometry import Box
from .loop import (
    ALREADY_CORRECT,
    CORRECTED,
    FAILED,
    LoopConfig,
    ReviewCandidate,
    ReviewDecision,
    ReviewGate,
    SubtaskResult,
    run_loop,
)
from .runlog import ArtifactStore, RunLog, write_json_atomic
from .scene import (
    KIND_ATTRIBUTE,
    KIND_COUNTING,
    KIND_SPATIAL,
    SceneSpec,
    Subtask,
    spec_from_json,
    spec_to_json,
    to_subtasks,
)
from .stitching import RefineConfig, assemble, refine

PENDING = "pending"
COUNTING = "counting"
CORRECTING = "correcting"
AWAITING_REVIEW = "awaiting_review"
STITCHING = "stitching"
DONE = "done"
PARTIALLY_CORRECTED = "partially_corrected"
ERROR = "error"

TERMINAL = (DONE, PARTIALLY_CORRECTED, ERROR)

SCENE_PARALLELISM_CAP = 8


class NoPendingCandidate(Exception):
    """A review action arrived for a subtask with nothing parked."""


class IterationBudgetExhausted(Exception):
    """reject_retry was requested but the loop has no iterations left."""


@dataclass(frozen=True)
class JobOptions:
    schedule: str = "parallel"
    max_iterations: int = 3
    crop_padding: float = 0.10
    blank_background: bool = False
    verifier_enabled: bool = True
    review: bool = False
    max_parallel: int = SCENE_PARALLELISM_CAP
    refine_steps: int = 40
    k_fraction: float = 0.75
    mask_from_start: bool = True

    def __post_init__(self):
        if self.schedule not in ("parallel", "serial"):
            raise ValueError(f"schedule must be parallel or serial, got {self.schedule!r}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "JobOptions":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class JobRecord:
    job_id: str
    description: str
    status: str
    options: JobOptions
    created: float
    updated: float
    input_hash: str
    spec: dict | None = None
    subtasks: list[dict] = field(default_factory=list)
    counting_reports: list[dict] = field(default_factory=list)
    counting_masks: list[str] = field(default_factory=list)
    post_counting_hash: str | None = None
    registry: dict[str, dict] = field(default_factory=dict)
    composite_hash: str | None = None
    mask_hash: str | None = None
    refined_hash: str | None = None
    flags: list[str] = field(default_factory=list)
    error: str | None = None
    timings: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        data = asdict(self)
        data["options"] = self.options.to_json()
        return data

    @classmethod
    def from_json(cls, data: dict) -> "JobRecord":
        data = dict(data)
        data["options"] = JobOptions.from_json(data.get("options", {}))
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})

    def subtask_state(self, subtask_id: str) -> dict:
        for entry in self.subtasks:
            if entry["id"] == subtask_id:
                return entry
        raise KeyError(f"no subtask {subtask_id}")


@dataclass
class _Parked:
    candidate: ReviewCandidate
    view: dict
    event: threading.Event = field(default_factory=threading.Event)
    decision: ReviewDecision | None = None


class Orchestrator:
    def __init__(self, root: Path | str, suite: BackendSuite):
        self.root = Path(root)
        self.jobs_dir = self.root / "jobs"
        self.jobs_dir.mkdir(parents=True, exist_ok=True)
        self.suite = suite
        self._parked: dict[tuple[str, str], _Parked] = {}
        self._parked_lock = threading.Lock()
        self._record_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    # -- submission and lookup ------------------------------------------------

    def submit(self, image: Image, description: str, options: JobOptions | None = None) -> JobRecord:
        options = options or JobOptions()
        clean = " ".join(description.split())
        if not clean:
            raise ValueError("description is empty")
        png = encode_png(image)
        seed = png + b"\x00" + clean.encode("utf-8") + b"\x00" + repr(sorted(options.to_json().items())).encode()
        job_id = content_hash(seed)[:16]

        job_dir = self.jobs_dir / job_id
        if (job_dir / "job.json").exists():
            return self.load(job_id)

        store = ArtifactStore(job_dir / "artifacts")
        input_hash = store.put_image(image)
        now = time.time()
        record = JobRecord(
            job_id=job_id,
            description=clean,
            status=PENDING,
            options=options,
            created=now,
            updated=now,
            input_hash=input_hash,
        )
        self._persist(record)
        RunLog(job_dir / "runlog.jsonl").append("submitted", job=job_id, input=input_hash)
        return record

    def job_dir(self, job_id: str) -> Path:
        return self.jobs_dir / job_id

    def load(self, job_id: str) -> JobRecord:
        path = self.job_dir(job_id) / "job.json"
        if not path.exists():
            raise KeyError(f"no job {job_id}")
        return JobRecord.from_json(json.loads(path.read_text(encoding="utf-8")))

    def list_jobs(self) -> list[JobRecord]:
        records = []
        for job_json in sorted(self.jobs_dir.glob("*/job.json")):
            records.append(JobRecord.from_json(json.loads(job_json.read_text(encoding="utf-8"))))
        records.sort(key=lambda r: (r.created, r.job_id))
        return records

    def store_for(self, job_id: str) -> ArtifactStore:
        return ArtifactStore(self.job_dir(job_id) / "artifacts")

    def artifact_path(self, digest: str) -> Path | None:
        for job_json in self.jobs_dir.glob("*/job.json"):
            path = ArtifactStore(job_json.parent / "artifacts").path_for(digest)
            if path is not None:
                return path
        return None

    # -- review queue ---------------------------------------------------------

    def pending_reviews(self, job_id: str) -> list[dict]:
        with self._parked_lock:
            return [parked.view for key, parked in sorted(self._parked.items()) if key[0] == job_id]

    def review_action(self, job_id: str, subtask_id: str, action: str, image: Image | None = None) -> dict:
        key = (job_id, subtask_id)
        with self._parked_lock:
            parked = self._parked.get(key)
        if parked is None or parked.event.is_set():
            raise NoPendingCandidate(f"no candidate awaiting review for {subtask_id}")
        if action == "reject_retry" and parked.candidate.remaining_retries <= 0:
            raise IterationBudgetExhausted(
                f"{subtask_id} has no retries left; approve or substitute"
            )
        if action == "substitute":
            if image is None:
                raise ValueError("substitute requires an image")
            self.store_for(job_id).put_image(image)
        elif action not in ("approve", "reject_retry"):
            raise ValueError(f"unknown review action {action!r}")
        parked.decision = ReviewDecision(action, image)
        parked.event.set()
        return {"subtask_id": subtask_id, "action": action}

    # -- execution ------------------------------------------------------------

    def run(self, job_id: str, review_gate: ReviewGate | None = None) -> JobRecord:
        """Drive a job to a terminal status. Blocks while candidates are
        parked for review. Safe to call again after a crash; completed
        phases and subtasks are not re-run."""
        record = self.load(job_id)
        job_dir = self.job_dir(job_id)
        store = ArtifactStore(job_dir / "artifacts")
        log = RunLog(job_dir / "runlog.jsonl")
        suite = self.suite.with_observer(lambda event: log.append("backend", **event))
        lock = self._record_lock(job_id)

        try:
            while record.status not in TERMINAL:
                phase = record.status
                started = time.time()
                if phase == PENDING:
                    self._phase_decompose(record, store, log, suite)
                elif phase == COUNTING:
                    self._phase_counting(record, store, log, suite)
                elif phase in (CORRECTING, AWAITING_REVIEW):
                    gate = review_gate
                    if gate is None and record.options.review:
                        gate = self._queue_gate(record, store, log, lock)
                    self._phase_correcting(record, store, log, suite, gate, lock)
                    phase = CORRECTING
                elif phase == STITCHING:
                    self._phase_stitching(record, store, log, suite)
                else:
                    raise RuntimeError(f"job {job_id} in unknown status {record.status!r}")
                record.timings[phase] = round(time.time() - started, 6)
                self._persist(record, lock)
                log.append("phase", phase=phase, status=record.status, seconds=record.timings[phase])
        except Exception as exc:
            record.status = ERROR
            record.error = f"{type(exc).__name__}: {exc}"
            self._persist(record, lock)
            log.append("error", error=record.error, trace=traceback.format_exc(limit=8))
        return record

    # -- phases ---------------------------------------------------------------

    def _phase_decompose(self, record: JobRecord, store: ArtifactStore, log: RunLog, suite: BackendSuite) -> None:
        spec = decompose(record.description, suite)
        record.spec = spec_to_json(spec)
        record.subtasks = [
            {"id": t.id, "kind": t.kind, "status": "pending", "iterations": 0}
            for t in to_subtasks(spec)
        ]
        record.status = COUNTING
        log.append("decomposed", objects=len(spec.objects), subtasks=len(record.subtasks))

    def _phase_counting(self, record: JobRecord, store: ArtifactStore, log: RunLog, suite: BackendSuite) -> None:
        spec = spec_from_json(record.spec)
        image = store.get_image(record.input_hash)
        registry: GeometryMap = {}
        todo = [e for e in record.subtasks if e["kind"] == KIND_COUNTING]
        # Boxes of every base, kept current as bases are treated in turn, so
        # insertion proposals never land on another base's objects.
        boxes: dict[str, list[Box]] = {}
        for entry in todo:
            subtask = self._find_subtask(spec, entry["id"])
            boxes[subtask.base_name] = [d.box for d in suite.detect(image, subtask.base_name)]
        for entry in todo:
            subtask = self._find_subtask(spec, entry["id"])
            ref_ids = tuple(sorted(r.id for r in spec.refs_for(subtask.base_name)))
            obstacles = [b for base, own in boxes.items() if base != subtask.base_name for b in own]
            try:
                plan = plan_counting(
                    image,
                    subtask.base_name,
                    subtask.target_count,
                    suite,
                    descriptions=self._insertion_descriptions(spec, subtask),
                    ref_ids=ref_ids,
                    obstacles=obstacles,
                )
                outcome = apply_counting(image, plan, suite)
            except NoFeasiblePlacement as exc:
                entry["status"] = FAILED
                entry["reason"] = str(exc)
                if "placement_infeasible" not in record.flags:
                    record.flags.append("placement_infeasible")
                log.append("counting", base=subtask.base_name, failed=str(exc))
                # Bind whatever instances do exist so attribute and spatial
                # loops on them still run.
                for i, det in enumerate(suite.detect(image, subtask.base_name)):
                    if i >= len(ref_ids):
                        break
                    display = f"{subtask.base_name}_{ref_ids[i]}"
                    registry[display] = (det.box, segment_or_box(suite, image, det.box))
                continue
            image = outcome.image
            registry.update(outcome.registry)
            boxes[subtask.base_name] = [box for box, _ in outcome.registry.values()]
            for mask in outcome.touched_masks:
                record.counting_masks.append(store.put_bytes(encode_mask_png(mask), ".png"))
            entry["status"] = ALREADY_CORRECT if plan.is_noop else CORRECTED
            entry["iterations"] = 0 if plan.is_noop else 1
            record.counting_reports.append(outcome.report)
            log.append("counting", **outcome.report)

        record.post_counting_hash = store.put_image(image)
        record.registry = {
            display: {
                "box": list(box.as_tuple()),
                "mask": store.put_bytes(encode_mask_png(mask), ".png"),
            }
            for display, (box, mask) in registry.items()
        }
        record.status = CORRECTING

    def _phase_correcting(
        self,
        record: JobRecord,
        store: ArtifactStore,
        log: RunLog,
        suite: BackendSuite,
        gate: ReviewGate | None,
        lock: threading.Lock,
    ) -> None:
        spec = spec_from_json(record.spec)
        image = store.get_image(record.post_counting_hash)
        registry = self._load_registry(record, store)
        config = LoopConfig(
            max_iterations=record.options.max_iterations,
            crop_padding=record.options.crop_padding,
            blank_background=record.options.blank_background,
            verifier_enabled=record.options.verifier_enabled,
        )
        todo = [
            entry
            for entry in record.subtasks
            if entry["kind"] in (KIND_ATTRIBUTE, KIND_SPATIAL) and entry["status"] in ("pending", "running")
        ]

        def displays_of(entry: dict) -> tuple[str, ...]:
            subtask = self._find_subtask(spec, entry["id"])
            if entry["kind"] == KIND_ATTRIBUTE:
                return (subtask.attribute.object.display,)
            return (subtask.spatial.subject.display, subtask.spatial.object.display)

        # Subtasks that touch the same object must see each other's fixes:
        # two independent edits of the same crop would otherwise each paste
        # over the other at assembly. They run as one chain on an evolving
        # copy of the frame; chains with no object in common stay
        # independent and may run in parallel.
        parent: dict[str, str] = {}

        def find(d: str) -> str:
            parent.setdefault(d, d)
            while parent[d] != d:
                d = parent[d]
            return d

        touched = {entry["id"]: displays_of(entry) for entry in todo}
        for ds in touched.values():
            for d in ds[1:]:
                parent[find(ds[0])] = find(d)
        buckets: dict[str, list[dict]] = {}
        for entry in todo:
            buckets.setdefault(find(touched[entry["id"]][0]), []).append(entry)
        chains = list(buckets.values())

        def execute_chain(chain: list[dict]) -> None:
            current = image
            for entry in chain:
                subtask = self._find_subtask(spec, entry["id"])
                try:
                    result = run_loop(subtask, current, registry, suite, config, gate)
                except Exception as exc:  # a broken backend fails one subtask, not the job
                    result = SubtaskResult(subtask.id, subtask.kind, FAILED, 0, reason=f"{type(exc).__name__}: {exc}")
                with lock:
                    self._record_result(record, entry, result, store)
                self._persist(record, lock)
                log.append(
                    "subtask",
                    id=subtask.id,
                    status=result.status,
                    iterations=result.iterations,
                    reason=result.reason,
                )
                if result.status == CORRECTED and result.kind == KIND_ATTRIBUTE and result.patch_image is not None:
                    current = gateway.paste(current, result.patch_image, result.patch_box)

        if record.options.schedule == "serial" or len(chains) <= 1:
            for chain in chains:
                execute_chain(chain)
        else:
            workers = max(1, min(record.options.max_parallel, SCENE_PARALLELISM_CAP, len(chains)))
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(execute_chain, chains))

        record.status = STITCHING

    def _phase_stitching(self, record: JobRecord, store: ArtifactStore, log: RunLog, suite: BackendSuite) -> None:
        image = store.get_image(record.post_counting_hash)
        registry = self._load_registry(record, store)
        results = [
            self._result_from_state(entry, store)
            for entry in record.subtasks
            if entry["kind"] in (KIND_ATTRIBUTE, KIND_SPATIAL)
        ]
        extra = tuple(
            decode_mask_png(store.open_bytes(digest)) for digest in record.counting_masks
        )
        composite, cmask = assemble(image, results, registry, suite, extra)
        record.composite_hash = store.put_image(composite)
        record.mask_hash = store.put_bytes(encode_mask_png(ObjectMask(cmask.pixel_bits)), ".png")

        if not cmask.pixel_bits.any():
            # Nothing was pasted, moved, or removed, so there is no seam to
            # smooth; running the refiner would only perturb untouched pixels.
            record.refined_hash = record.composite_hash
            log.append("refined", steps=0, masked_steps=0, masked_cells=0)
        else:
            refine_config = RefineConfig(
                steps=record.options.refine_steps,
                k_fraction=record.options.k_fraction,
                mask_from_start=record.options.mask_from_start,
            )
            refined, trace = refine(composite, cmask, refine_config, suite)
            record.refined_hash = store.put_image(refined)
            log.append(
                "refined",
                steps=refine_config.steps,
                masked_steps=refine_config.masked_steps,
                masked_cells=int(cmask.latent_bits.sum()),
            )

        statuses = {entry["status"] for entry in record.subtasks}
        clean = statuses <= {ALREADY_CORRECT, CORRECTED} and not record.flags
        record.status = DONE if clean else PARTIALLY_CORRECTED

    # -- helpers ---------------------------------------------------------------

    def _record_lock(self, job_id: str) -> threading.Lock:
        with self._locks_guard:
            if job_id not in self._record_locks:
                self._record_locks[job_id] = threading.Lock()
            return self._record_locks[job_id]

    def _persist(self, record: JobRecord, lock: threading.Lock | None = None) -> None:
        path = self.job_dir(record.job_id) / "job.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        if lock is None:
            record.updated = time.time()
            write_json_atomic(path, record.to_json())
            return
        with lock:
            record.updated = time.time()
            write_json_atomic(path, record.to_json())

    @staticmethod
    def _find_subtask(spec: SceneSpec, subtask_id: str) -> Subtask:
        for subtask in to_subtasks(spec):
            if subtask.id == subtask_id:
                return subtask
        raise KeyError(f"subtask {subtask_id} not in spec")

    @staticmethod
    def _insertion_descriptions(spec: SceneSpec, subtask: Subtask) -> list[str]:
        """Generation prompts for inserted instances: the base noun plus any
        attribute values every instance of the base shares."""
        refs = spec.refs_for(subtask.base_name)
        shared: list[str] = []
        for category in ("shape", "color", "texture"):
            values = {
                a.attribute
                for ref in refs
                for a in spec.attributes
                if a.object == ref and a.category == category
            }
            per_ref = [
                [a.attribute for a in spec.attributes if a.object == ref and a.category == category]
                for ref in refs
            ]
            if len(values) == 1 and all(len(p) == 1 for p in per_ref):
                shared.append(next(iter(values)))
        text = " ".join(shared + [subtask.base_name])
        return [text] * max(0, subtask.target_count)

    def _load_registry(self, record: JobRecord, store: ArtifactStore) -> GeometryMap:
        registry: GeometryMap = {}
        for display, data in record.registry.items():
            box = Box(*data["box"])
            mask = decode_mask_png(store.open_bytes(data["mask"]))
            registry[display] = (box, mask)
        return registry

    def _record_result(self, record: JobRecord, entry: dict, result: SubtaskResult, store: ArtifactStore) -> None:
        entry["status"] = result.status
        entry["iterations"] = result.iterations
        entry["reason"] = result.reason
        entry["target_ref"] = result.target_ref
        entry["substituted"] = result.substituted
        entry["transcript"] = result.transcript
        if result.infeasible and "placement_infeasible" not in record.flags:
            record.flags.append("placement_infeasible")
        if result.patch_image is not None:
            entry["patch"] = store.put_image(result.patch_image)
            entry["patch_box"] = list(result.patch_box.as_tuple())
        if result.patch_mask is not None:
            entry["patch_mask"] = store.put_bytes(encode_mask_png(result.patch_mask), ".png")
        if result.placement is not None:
            entry["placement"] = list(result.placement.as_tuple())
            entry["moved_ref"] = result.moved_ref

    def _result_from_state(self, entry: dict, store: ArtifactStore) -> SubtaskResult:
        result = SubtaskResult(
            subtask_id=entry["id"],
            kind=entry["kind"],
            status=entry["status"],
            iterations=entry.get("iterations", 0),
            target_ref=entry.get("target_ref"),
            substituted=entry.get("substituted", False),
            reason=entry.get("reason"),
        )
        if entry.get("patch"):
            result.patch_image = store.get_image(entry["patch"])
            result.patch_box = Box(*entry["patch_box"])
        if entry.get("patch_mask"):
            result.patch_mask = decode_mask_png(store.open_bytes(entry["patch_mask"]))
        if entry.get("placement"):
            result.placement = Box(*entry["placement"])
            result.moved_ref = entry.get("moved_ref")
        return result

    def _queue_gate(self, record: JobRecord, store: ArtifactStore, log: RunLog, lock: threading.Lock) -> ReviewGate:
        job_id = record.job_id

        def gate(candidate: ReviewCandidate) -> ReviewDecision:
            before_hash = store.put_image(candidate.before)
            candidate_hash = store.put_image(candidate.candidate)
            view = {
                "job_id": job_id,
                "subtask_id": candidate.subtask_id,
                "kind": candidate.kind,
                "iteration": candidate.iteration,
                "remaining_retries": candidate.remaining_retries,
                "view_box": list(candidate.view_box.as_tuple()),
                "before": before_hash,
                "candidate": candidate_hash,
                "summary": candidate.summary,
                "note": candidate.note,
            }
            parked = _Parked(candidate=candidate, view=view)
            key = (job_id, candidate.subtask_id)
            with self._parked_lock:
                self._parked[key] = parked
            with lock:
                record.status = AWAITING_REVIEW
                state = record.subtask_state(candidate.subtask_id)
                state["status"] = "awaiting_review"
            self._persist(record, lock)
            # "kind" is the log entry type, so the subtask kind travels
            # under a different name.
            detail = {k: v for k, v in view.items() if k not in ("job_id", "kind")}
            log.append("review_parked", subtask_kind=view["kind"], **detail)

            parked.event.wait()

            with self._parked_lock:
                self._parked.pop(key, None)
                others = any(k[0] == job_id for k in self._parked)
            with lock:
                state = record.subtask_state(candidate.subtask_id)
                state["status"] = "running"
                if not others:
                    record.status = CORRECTING
            self._persist(record, lock)
            decision = parked.decision or ReviewDecision("reject_retry")
            log.append("review_decision", subtask=candidate.subtask_id, action=decision.action)
            return decision

        return gate
