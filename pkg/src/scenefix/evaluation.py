"""Synthetic benchmark: generate corrupted scenes, run jobs, score results.

Scenes are built on a 256x256 canvas with 2 to 7 non-overlapping objects in
1 to 4 groups. Every group gets a color constraint, striped groups a
texture constraint, and some scenes a spatial constraint between singleton
groups that holds in the clean layout. Each scene then receives 1 to 3
corruptions drawn round-robin from {wrong color, extra object, missing
object, swapped positions} so categories stay balanced across a suite, and
the description always states the uncorrupted target.

Scoring is independent of the pipeline's own judges: counting reads the
scene annotation, color and texture vote over the pixels inside each
object's footprint, shape and spatial relations come from footprint
geometry. Instances are bound to spec ids in detection-rank order (largest
visible area first, ties left to right then top to bottom).
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends.base import LATENT_BLOCK, BackendSuite
from .backends.mock import MockConfig, build_mock_suite, describe_spec
from .backends.types import Image, decode_mask_png
from .backends.world import (
    WorldObject,
    WorldState,
    object_raster,
    render,
    shape_for_noun,
    visible_area,
)
from .geometry import (
    BACKGROUND_RGB,
    COLOR_NAMES,
    COLOR_TABLE,
    STRIPE_SECONDARY,
    Box,
    box_gap,
    relation_holds,
)
from .orchestrator import ERROR, JobOptions, Orchestrator
from .runlog import ArtifactStore
from .scene import (
    AttributeConstraint,
    ObjectRef,
    SceneSpec,
    SpatialConstraint,
)
from .stitching import latent_bits_for

CANVAS = 256
MIN_SIZE = 28
MAX_SIZE = 56
MIN_GAP = 10
STRIPED_RATE = 0.35
SHAPE_CONSTRAINT_RATE = 0.3

NOUNS = (
    "ball", "bear", "bird", "box", "cat", "crab", "cup", "dog", "drum", "duck",
    "fox", "frog", "kite", "pig", "plum", "ring", "shell", "star", "stone", "tree",
)

CORRUPTIONS = (
    "wrong_color",
    "extra_object",
    "wrong_texture",
    "missing_object",
    "wrong_shape",
    "swapped_positions",
)

DIRECTIONAL = ("left_of", "right_of", "above", "below")

SHAPE_WORD = {"rectangle": "rectangular", "ellipse": "round"}


@dataclass(frozen=True)
class SyntheticScene:
    scene_id: str
    description: str
    spec: SceneSpec
    world: WorldState
    corruptions: tuple[str, ...]


@dataclass
class ScoreCard:
    rows: list[dict] = field(default_factory=list)

    def totals(self) -> dict[str, tuple[int, int]]:
        out: dict[str, list[int]] = {}
        for row in self.rows:
            if row["satisfied"] is None:
                continue
            sat, total = out.setdefault(row["kind"], [0, 0])
            out[row["kind"]][0] = sat + (1 if row["satisfied"] else 0)
            out[row["kind"]][1] = total + 1
        return {k: (v[0], v[1]) for k, v in out.items()}

    def accuracy(self, kind: str) -> float | None:
        sat, total = self.totals().get(kind, (0, 0))
        return None if total == 0 else sat / total


# ============================================================================
# Scene generation
# ============================================================================


def generate_suite(n: int, seed: int) -> list[SyntheticScene]:
    rng = np.random.default_rng(seed)
    cycle = 0
    scenes = []
    for i in range(n):
        scene, cycle = _generate_scene(rng, i, cycle)
        scenes.append(scene)
    return scenes


def _generate_scene(rng: np.random.Generator, index: int, cycle: int) -> tuple[SyntheticScene, int]:
    total = int(rng.integers(2, 8))
    n_corr = int(rng.integers(1, 4))
    planned = [CORRUPTIONS[(cycle + j) % len(CORRUPTIONS)] for j in range(n_corr)]
    cycle += n_corr

    want_swap = "swapped_positions" in planned
    parts = _partition(rng, total, want_swap)
    nouns = [NOUNS[j] for j in rng.choice(len(NOUNS), size=len(parts), replace=False)]
    colors = [COLOR_NAMES[j] for j in rng.choice(len(COLOR_NAMES), size=len(parts), replace=False)]
    striped = [bool(rng.random() < STRIPED_RATE) for _ in parts]

    # Build refs, attribute constraints, and true-layout boxes.
    refs: list[ObjectRef] = []
    attributes: list[AttributeConstraint] = []
    sizes: dict[str, tuple[int, int]] = {}
    group_of: dict[str, int] = {}
    for g, count in enumerate(parts):
        for k in range(count):
            ref = ObjectRef(nouns[g], k + 1)
            refs.append(ref)
            group_of[ref.display] = g
            sizes[ref.display] = (
                int(rng.integers(MIN_SIZE, MAX_SIZE + 1)),
                int(rng.integers(MIN_SIZE, MAX_SIZE + 1)),
            )
            attributes.append(AttributeConstraint(ref, "color", colors[g]))
            if striped[g]:
                attributes.append(AttributeConstraint(ref, "texture", "striped"))
        if rng.random() < SHAPE_CONSTRAINT_RATE:
            for k in range(count):
                attributes.append(
                    AttributeConstraint(ObjectRef(nouns[g], k + 1), "shape", SHAPE_WORD[shape_for_noun(nouns[g])])
                )

    singles = [nouns[g] for g, count in enumerate(parts) if count == 1]
    swap_pair: tuple[str, str] | None = None
    if want_swap:
        swap_pair = (f"{singles[0]}_1", f"{singles[1]}_1")
        # Equal footprints make swapping positions collision-free.
        sizes[swap_pair[1]] = sizes[swap_pair[0]]

    boxes = _place_all(rng, refs, sizes, swap_pair)

    spatials = _pick_spatials(rng, singles, boxes, want_swap)
    spec = SceneSpec(
        description="",
        objects=refs,
        attributes=attributes,
        spatials=spatials,
    )
    description = describe_spec(spec)
    spec = SceneSpec(description, refs, attributes, spatials)

    world_objects = {
        ref.display: WorldObject(
            base_name=ref.base_name,
            shape=shape_for_noun(ref.base_name),
            color=colors[group_of[ref.display]],
            box=boxes[ref.display],
            texture="striped" if striped[group_of[ref.display]] else "solid",
        )
        for ref in refs
    }

    applied = _corrupt(rng, planned, world_objects, spec, group_of, colors, striped, nouns, swap_pair)
    world = WorldState(CANVAS, CANVAS, tuple(world_objects[k] for k in sorted(world_objects)))
    scene = SyntheticScene(f"scene-{index:03d}", description, spec, world, tuple(applied))
    return scene, cycle


def _partition(rng: np.random.Generator, total: int, want_swap: bool) -> list[int]:
    groups = int(rng.integers(1, min(4, total) + 1))
    if want_swap:
        groups = max(groups, 3 if total > 2 else 2)
        groups = min(groups, total)
    base, rem = divmod(total, groups)
    parts = [base + 1] * rem + [base] * (groups - rem)
    if want_swap:
        # Two singleton groups to swap; steal from the largest part.
        while parts.count(1) < 2:
            parts.sort(reverse=True)
            parts[0] -= 1
            parts.append(1)
    return [p for p in parts if p > 0]


def _place_all(
    rng: np.random.Generator,
    refs: list[ObjectRef],
    sizes: dict[str, tuple[int, int]],
    swap_pair: tuple[str, str] | None,
) -> dict[str, Box]:
    """Sequential rejection placement keeping MIN_GAP between boxes. When a
    swap is planned, the second participant is re-rolled until some
    directional relation holds with room to spare."""
    for _ in range(60):
        placed: dict[str, Box] = {}
        ok = True
        for ref in refs:
            w, h = sizes[ref.display]
            box = _place_one(rng, w, h, list(placed.values()))
            if box is None:
                ok = False
                break
            if swap_pair is not None and ref.display == swap_pair[1]:
                other = placed.get(swap_pair[0])
                tries = 0
                while other is not None and not _directional_with_margin(box, other) and tries < 80:
                    box = _place_one(rng, w, h, list(placed.values()))
                    if box is None:
                        break
                    tries += 1
                if box is None or (other is not None and not _directional_with_margin(box, other)):
                    ok = False
                    break
            placed[ref.display] = box
        if ok:
            return placed
    raise RuntimeError("could not place scene objects; canvas too crowded")


def _place_one(rng: np.random.Generator, w: int, h: int, placed: list[Box]) -> Box | None:
    for _ in range(300):
        x = int(rng.integers(0, CANVAS - w + 1))
        y = int(rng.integers(0, CANVAS - h + 1))
        box = Box(x, y, w, h)
        if all(box_gap(box, other) >= MIN_GAP for other in placed):
            return box
    return None


def _directional_with_margin(a: Box, b: Box) -> bool:
    return any(relation_holds(rel, a, b, CANVAS, CANVAS) for rel in DIRECTIONAL)


def _pick_spatials(
    rng: np.random.Generator,
    singles: list[str],
    boxes: dict[str, Box],
    want_swap: bool,
) -> list[SpatialConstraint]:
    if len(singles) < 2:
        return []
    limit = 1 if want_swap else int(rng.integers(0, 3))
    if limit == 0:
        return []
    out: list[SpatialConstraint] = []
    used: set[str] = set()
    pairs = [(a, b) for i, a in enumerate(singles) for b in singles[i + 1 :]]
    for a, b in pairs:
        if len(out) >= limit:
            break
        if a in used or b in used:
            continue
        sub, obj = ObjectRef(a, 1), ObjectRef(b, 1)
        holding = [
            rel
            for rel in DIRECTIONAL
            if relation_holds(rel, boxes[sub.display], boxes[obj.display], CANVAS, CANVAS)
        ]
        if not holding:
            continue
        rel = holding[int(rng.integers(0, len(holding)))]
        out.append(SpatialConstraint(sub, rel, obj))
        used.update((a, b))
    return out


def _corrupt(
    rng: np.random.Generator,
    planned: list[str],
    world_objects: dict[str, WorldObject],
    spec: SceneSpec,
    group_of: dict[str, int],
    colors: list[str],
    striped: list[bool],
    nouns: list[str],
    swap_pair: tuple[str, str] | None,
) -> list[str]:
    """Apply planned corruptions to the render truth. Inapplicable ones fall
    through to the next applicable category so suites stay near-balanced."""
    applied: list[str] = []
    recolored: set[str] = set()
    detextured: set[str] = set()
    reshaped: set[str] = set()
    striped_groups = {g for g, s in enumerate(striped) if s}
    shape_constrained = {c.object.display for c in spec.attributes if c.category == "shape"}
    spatial_members = {c.subject.display for c in spec.spatials} | {
        c.object.display for c in spec.spatials
    }

    for category in planned:
        order = [category] + [c for c in CORRUPTIONS if c != category]
        for attempt in order:
            if attempt == "wrong_color":
                candidates = sorted(set(world_objects) - recolored)
                if not candidates:
                    continue
                take = max(1, len(candidates) - int(rng.integers(0, 2)))
                for _ in range(take):
                    display = candidates.pop(int(rng.integers(0, len(candidates))))
                    obj = world_objects[display]
                    others = [c for c in COLOR_NAMES if c != obj.color]
                    new_color = others[int(rng.integers(0, len(others)))]
                    world_objects[display] = WorldObject(
                        obj.base_name, obj.shape, new_color, obj.box, obj.texture
                    )
                    recolored.add(display)
            elif attempt == "wrong_texture":
                candidates = sorted(
                    d
                    for d, obj in world_objects.items()
                    if d not in detextured
                    and "_extra" not in d
                    and group_of.get(d) in striped_groups
                    and obj.texture == "striped"
                )
                if not candidates:
                    continue
                take = max(1, len(candidates) - int(rng.integers(0, 2)))
                for _ in range(take):
                    display = candidates.pop(int(rng.integers(0, len(candidates))))
                    obj = world_objects[display]
                    world_objects[display] = WorldObject(
                        obj.base_name, obj.shape, obj.color, obj.box, "solid"
                    )
                    detextured.add(display)
            elif attempt == "wrong_shape":
                candidates = sorted(
                    d
                    for d in shape_constrained
                    if d in world_objects and d not in reshaped
                )
                if not candidates:
                    continue
                take = max(1, len(candidates) - int(rng.integers(0, 2)))
                for _ in range(take):
                    display = candidates.pop(int(rng.integers(0, len(candidates))))
                    obj = world_objects[display]
                    flipped = "ellipse" if obj.shape == "rectangle" else "rectangle"
                    world_objects[display] = WorldObject(
                        obj.base_name, flipped, obj.color, obj.box, obj.texture
                    )
                    reshaped.add(display)
            elif attempt == "extra_object":
                preferred = [n for g, n in enumerate(nouns) if f"{n}_1" not in spatial_members]
                pool = preferred or list(nouns)
                noun = pool[int(rng.integers(0, len(pool)))]
                g = nouns.index(noun)
                w = int(rng.integers(MIN_SIZE, MAX_SIZE + 1))
                h = int(rng.integers(MIN_SIZE, MAX_SIZE + 1))
                box = _place_one(rng, w, h, [o.box for o in world_objects.values()])
                if box is None:
                    continue
                extra_key = f"{noun}_extra{len(world_objects)}"
                world_objects[extra_key] = WorldObject(
                    noun,
                    shape_for_noun(noun),
                    colors[g],
                    box,
                    "striped" if striped[g] else "solid",
                )
            elif attempt == "missing_object":
                candidates = [d for d in sorted(world_objects) if "_extra" not in d]
                if not candidates:
                    continue
                display = candidates[int(rng.integers(0, len(candidates)))]
                del world_objects[display]
            else:  # swapped_positions
                if swap_pair is None or swap_pair[0] not in world_objects or swap_pair[1] not in world_objects:
                    continue
                a, b = world_objects[swap_pair[0]], world_objects[swap_pair[1]]
                world_objects[swap_pair[0]] = WorldObject(a.base_name, a.shape, a.color, b.box, a.texture)
                world_objects[swap_pair[1]] = WorldObject(b.base_name, b.shape, b.color, a.box, b.texture)
            applied.append(attempt)
            break
    return applied


# ============================================================================
# Scoring
# ============================================================================


def score(image: Image, spec: SceneSpec) -> ScoreCard:
    if image.world is None:
        raise ValueError("scoring needs an annotated image")
    world = image.world
    binding = _bind(world, spec)
    card = ScoreCard()

    for base, target in spec.target_counts().items():
        count = sum(1 for obj in world.objects if obj.base_name == base)
        card.rows.append(
            {"kind": "counting", "detail": base, "satisfied": count == target, "bound": True}
        )

    for i, con in enumerate(spec.attributes):
        idx = binding.get(con.object.display)
        if idx is None:
            card.rows.append(
                {"kind": con.category, "detail": f"{con.object.display}:{con.attribute}", "satisfied": False, "bound": False}
            )
            continue
        obj = world.objects[idx]
        if con.category == "color":
            observed = _majority_color(image, obj)
            ok = observed == con.attribute
        elif con.category == "texture":
            observed = _texture_of(image, obj)
            ok = observed == con.attribute
        else:
            ok = SHAPE_WORD[obj.shape] == _canon_shape(con.attribute)
        card.rows.append(
            {"kind": con.category, "detail": f"{con.object.display}:{con.attribute}", "satisfied": bool(ok), "bound": True}
        )

    for con in spec.spatials:
        detail = f"{con.subject.display}:{con.relation}:{con.object.display}"
        if con.relation == "other":
            card.rows.append({"kind": "spatial", "detail": detail, "satisfied": None, "bound": True})
            continue
        si = binding.get(con.subject.display)
        oi = binding.get(con.object.display)
        if si is None or oi is None:
            card.rows.append({"kind": "spatial", "detail": detail, "satisfied": False, "bound": False})
            continue
        ok = relation_holds(
            con.relation, world.objects[si].box, world.objects[oi].box, world.frame_w, world.frame_h
        )
        card.rows.append({"kind": "spatial", "detail": detail, "satisfied": bool(ok), "bound": True})
    return card


def _bind(world: WorldState, spec: SceneSpec) -> dict[str, int]:
    """Instances to spec ids, detection-rank order onto ascending ids."""
    binding: dict[str, int] = {}
    for base in spec.target_counts():
        ranked = sorted(
            (i for i, obj in enumerate(world.objects) if obj.base_name == base),
            key=lambda i: (
                -visible_area(world.objects[i], world),
                world.objects[i].box.x,
                world.objects[i].box.y,
            ),
        )
        ids = sorted(r.id for r in spec.refs_for(base))
        for slot, idx in zip(ids, ranked):
            binding[f"{base}_{slot}"] = idx
    return binding


_PALETTE = np.array([COLOR_TABLE[name] for name in COLOR_NAMES], dtype=int)


def _majority_color(image: Image, obj: WorldObject) -> str:
    """Every footprint pixel votes for its nearest table color. Sampling
    would bias striped objects, whose pattern is periodic."""
    raster = object_raster(obj, image.height, image.width)
    pixels = image.pixels[raster].astype(int)
    if len(pixels) == 0:
        return "none"
    distances = ((pixels[:, None, :] - _PALETTE[None, :, :]) ** 2).sum(axis=2)
    counts = np.bincount(distances.argmin(axis=1), minlength=len(COLOR_NAMES))
    return min(COLOR_NAMES[i] for i in np.flatnonzero(counts == counts.max()))


def _texture_of(image: Image, obj: WorldObject) -> str:
    raster = object_raster(obj, image.height, image.width)
    pixels = image.pixels[raster].astype(int)
    if len(pixels) == 0:
        return "solid"
    dark = np.abs(pixels - np.array(STRIPE_SECONDARY)).max(axis=1) <= 20
    return "striped" if float(dark.mean()) >= 0.15 else "solid"


def _canon_shape(word: str) -> str:
    return {"square": "rectangular", "oval": "round", "elliptical": "round"}.get(word, word)


# ============================================================================
# Suite execution
# ============================================================================


@dataclass(frozen=True)
class EvalConfig:
    name: str = "clean"
    eps_vlm: float = 0.0
    eps_edit: float = 0.0
    latency: float = 0.0
    verifier_enabled: bool = True
    schedule: str = "parallel"
    k_fraction: float = 0.75
    refine_steps: int = 40
    seed: int = 0


NOISY_PRESET = dict(eps_vlm=0.2, eps_edit=0.6)


def run_scene(
    scene: SyntheticScene,
    workdir: Path,
    suite: BackendSuite,
    options: JobOptions,
) -> dict:
    image = render(scene.world)
    pre = score(image, scene.spec)
    orch = Orchestrator(workdir, suite)
    started = time.time()
    record = orch.submit(image, scene.description, options)
    record = orch.run(record.job_id)
    elapsed = time.time() - started

    if record.status == ERROR or record.refined_hash is None:
        post = pre
    else:
        final = orch.store_for(record.job_id).get_image(record.refined_hash)
        post = score(final, scene.spec)

    return {
        "scene_id": scene.scene_id,
        "status": record.status,
        "flags": list(record.flags),
        "error": record.error,
        "corruptions": list(scene.corruptions),
        "seconds": round(elapsed, 4),
        "job_id": record.job_id,
        "pre": pre.rows,
        "post": post.rows,
    }


def run_suite(
    scenes: list[SyntheticScene],
    workdir: Path | str,
    config: EvalConfig,
) -> dict:
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    options = JobOptions(
        schedule=config.schedule,
        verifier_enabled=config.verifier_enabled,
        k_fraction=config.k_fraction,
        refine_steps=config.refine_steps,
    )
    rows = []
    started = time.time()
    for index, scene in enumerate(scenes):
        suite = build_mock_suite(
            MockConfig(
                eps_vlm=config.eps_vlm,
                eps_edit=config.eps_edit,
                latency=config.latency,
                seed=config.seed * 1_000_003 + index,
            )
        )
        rows.append(run_scene(scene, workdir / scene.scene_id, suite, options))
    wall = time.time() - started
    return {
        "config": config.__dict__ | {"scenes": len(scenes)},
        "wall_seconds": round(wall, 4),
        "aggregates": aggregate(rows),
        "rows": rows,
    }


def aggregate(rows: list[dict]) -> dict:
    kinds = ("counting", "color", "texture", "shape", "spatial")
    out: dict = {"scenes": len(rows), "flagged": 0, "errors": 0}
    for phase in ("pre", "post"):
        for kind in kinds:
            sat = total = 0
            for row in rows:
                for item in row[phase]:
                    if item["kind"] == kind and item["satisfied"] is not None:
                        total += 1
                        sat += 1 if item["satisfied"] else 0
            out[f"{phase}_{kind}"] = None if total == 0 else round(sat / total, 4)
    out["flagged"] = sum(1 for row in rows if row["flags"])
    out["errors"] = sum(1 for row in rows if row["status"] == "error")
    out["mean_seconds"] = round(float(np.mean([row["seconds"] for row in rows])), 4) if rows else 0.0
    out["correction_rate_color"] = correction_rate(rows, "color")
    return out


def correction_rate(rows: list[dict], kind: str) -> float | None:
    """Of the constraints violated before the run (with the object present),
    the fraction satisfied afterwards."""
    fixed = total = 0
    for row in rows:
        post_by_detail = {item["detail"]: item for item in row["post"] if item["kind"] == kind}
        for item in row["pre"]:
            if item["kind"] != kind or item["satisfied"] is not False or not item["bound"]:
                continue
            total += 1
            after = post_by_detail.get(item["detail"])
            if after is not None and after["satisfied"]:
                fixed += 1
    return None if total == 0 else round(fixed / total, 4)


def background_deviation(workroot: Path, rows: list[dict]) -> dict:
    """Pixel drift outside the dilated composite mask between composite and
    refined frames, pooled over a suite."""
    worst = 0.0
    means = []
    for row in rows:
        job_dir = Path(workroot) / row["scene_id"] / "jobs" / row["job_id"]
        record = json.loads((job_dir / "job.json").read_text(encoding="utf-8"))
        if not record.get("composite_hash") or not record.get("refined_hash"):
            continue
        store = ArtifactStore(job_dir / "artifacts")
        composite = store.get_image(record["composite_hash"])
        refined = store.get_image(record["refined_hash"])
        mask = decode_mask_png(store.open_bytes(record["mask_hash"]))
        cells = latent_bits_for(mask.bits)
        dilated = np.repeat(np.repeat(cells, LATENT_BLOCK, axis=0), LATENT_BLOCK, axis=1)[
            : composite.height, : composite.width
        ]
        outside = ~dilated
        if not outside.any():
            continue
        diff = np.abs(composite.pixels.astype(int) - refined.pixels.astype(int))[outside]
        worst = max(worst, float(diff.max()))
        means.append(float(diff.mean()))
    return {
        "max_outside": worst,
        "mean_outside": round(float(np.mean(means)), 6) if means else 0.0,
    }


def run_ablations(n: int, seed: int, out_dir: Path | str) -> dict:
    """The full grid: verifier on/off x serial/parallel x clean/noisy, plus a
    smoothing-depth sweep with background-drift measurements."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenes = generate_suite(n, seed)

    configs = []
    for verifier in (True, False):
        for schedule in ("serial", "parallel"):
            for noisy in (False, True):
                preset = NOISY_PRESET if noisy else {}
                configs.append(
                    EvalConfig(
                        name=f"verifier_{'on' if verifier else 'off'}-{schedule}-{'noisy' if noisy else 'clean'}",
                        verifier_enabled=verifier,
                        schedule=schedule,
                        seed=seed,
                        **preset,
                    )
                )

    report = {"seed": seed, "scenes": n, "runs": [], "k_sweep": []}
    for config in configs:
        result = run_suite(scenes, out_dir / config.name, config)
        report["runs"].append(
            {"name": config.name, "config": result["config"], **result["aggregates"]}
        )

    for k in (0.5, 0.75, 1.0):
        config = EvalConfig(name=f"k_{k}", k_fraction=k, seed=seed)
        result = run_suite(scenes, out_dir / config.name, config)
        drift = background_deviation(out_dir / config.name, result["rows"])
        report["k_sweep"].append(
            {"name": config.name, "k_fraction": k, **result["aggregates"], **drift}
        )

    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    _write_csv(out_dir / "report.csv", report)
    return report


def _write_csv(path: Path, report: dict) -> None:
    rows = report["runs"] + report["k_sweep"]
    keys: list[str] = []
    for row in rows:
        for key in row:
            if key not in keys and not isinstance(row[key], (dict, list)):
                keys.append(key)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in keys})
