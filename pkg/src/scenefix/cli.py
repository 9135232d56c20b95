"""Command line entry points: run one job, benchmark a suite, serve HTTP.

Exit codes for `run`: 0 when every constraint ends satisfied, 2 when the
job finishes with failures or flags (partially corrected), 1 on error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .backends import decode_png, render, suite_from_config, world_from_json
from .backends.types import Image
from .evaluation import (
    NOISY_PRESET,
    EvalConfig,
    generate_suite,
    run_ablations,
    run_suite,
)
from .loop import ReviewCandidate, ReviewDecision
from .orchestrator import DONE, ERROR, JobOptions, Orchestrator
from .service import create_app

EXIT_CODES = {DONE: 0, ERROR: 1}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "eval":
        return cmd_eval(args)
    if args.command == "serve":
        return cmd_serve(args)
    parser.print_help()
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenefix", description=__doc__)
    parser.add_argument("--version", action="version", version=f"scenefix {__version__}")
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", help="correct one image against its description")
    run.add_argument("--image", required=True, help="input PNG, or scene JSON to render")
    run.add_argument("--prompt", required=True, help="the description the image should satisfy")
    run.add_argument("--backends", help="backends config JSON file (default: exact mock)")
    run.add_argument("--out", default="scenefix-runs", help="job root directory")
    run.add_argument("--schedule", choices=("parallel", "serial"), default="parallel")
    run.add_argument("--max-iterations", type=int, default=3)
    run.add_argument("--steps", type=int, default=40, help="refiner steps")
    run.add_argument("--k-fraction", type=float, default=0.75, help="masked fraction of refiner steps")
    run.add_argument("--no-verifier", action="store_true", help="accept first candidates unchecked")
    run.add_argument("--blank-background", action="store_true", help="blank crops outside the object")
    run.add_argument("--review", action="store_true", help="confirm each candidate on stdin")

    ev = sub.add_parser("eval", help="run the synthetic benchmark")
    ev.add_argument("--n", type=int, default=100)
    ev.add_argument("--seed", type=int, default=7)
    ev.add_argument("--out", default="scenefix-eval")
    ev.add_argument("--ablations", action="store_true", help="full grid plus smoothing sweep")
    ev.add_argument("--noisy", action="store_true", help="apply the noisy backend preset")
    ev.add_argument("--no-verifier", action="store_true")
    ev.add_argument("--schedule", choices=("parallel", "serial"), default="parallel")
    ev.add_argument("--k-fraction", type=float, default=0.75)
    ev.add_argument("--steps", type=int, default=40)
    ev.add_argument("--latency", type=float, default=0.0)

    sv = sub.add_parser("serve", help="HTTP API for jobs, artifacts, and review")
    sv.add_argument("--root", default="scenefix-runs")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8032)
    sv.add_argument("--backends", help="backends config JSON file (default: exact mock)")
    return parser


def _load_suite(path: str | None):
    config = {"mode": "mock"}
    if path:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    return suite_from_config(config)


def _load_image(path: str) -> Image:
    data = Path(path).read_bytes()
    if path.endswith(".json") or data.lstrip().startswith(b"{"):
        return render(world_from_json(json.loads(data.decode("utf-8"))))
    return decode_png(data)


def cmd_run(args) -> int:
    suite = _load_suite(args.backends)
    image = _load_image(args.image)
    options = JobOptions(
        schedule=args.schedule,
        max_iterations=args.max_iterations,
        refine_steps=args.steps,
        k_fraction=args.k_fraction,
        verifier_enabled=not args.no_verifier,
        blank_background=args.blank_background,
        review=args.review,
    )
    orch = Orchestrator(args.out, suite)
    record = orch.submit(image, args.prompt, options)
    print(f"job {record.job_id} -> {orch.job_dir(record.job_id)}")
    gate = _stdin_gate(orch, record.job_id) if args.review else None
    record = orch.run(record.job_id, review_gate=gate)

    for entry in record.subtasks:
        line = f"  {entry['id']}: {entry['status']}"
        if entry.get("reason"):
            line += f" ({entry['reason']})"
        print(line)
    if record.error:
        print(f"error: {record.error}", file=sys.stderr)
    if record.flags:
        print(f"flags: {', '.join(record.flags)}")
    if record.refined_hash:
        path = orch.store_for(record.job_id).path_for(record.refined_hash)
        print(f"refined: {path}")
    print(f"status: {record.status}")
    return EXIT_CODES.get(record.status, 2)


def _stdin_gate(orch: Orchestrator, job_id: str):
    store = orch.store_for(job_id)

    def gate(candidate: ReviewCandidate) -> ReviewDecision:
        before = store.put_image(candidate.before)
        after = store.put_image(candidate.candidate)
        print(f"review {candidate.subtask_id} (iteration {candidate.iteration}, "
              f"{candidate.remaining_retries} retries left): {candidate.summary}")
        if candidate.note:
            print(f"  note: {candidate.note}")
        print(f"  before:    {store.path_for(before)}")
        print(f"  candidate: {store.path_for(after)}")
        while True:
            sys.stdout.write("  [a]pprove / [r]etry / s <png path> to substitute: ")
            sys.stdout.flush()
            line = sys.stdin.readline()
            if not line:
                return ReviewDecision("approve")
            line = line.strip()
            if line in ("a", "approve"):
                return ReviewDecision("approve")
            if line in ("r", "retry", "reject"):
                if candidate.remaining_retries <= 0:
                    print("  no retries left; approve or substitute")
                    continue
                return ReviewDecision("reject_retry")
            if line.startswith("s ") or line.startswith("substitute "):
                path = line.split(None, 1)[1]
                try:
                    image = decode_png(Path(path).read_bytes())
                except Exception as exc:
                    print(f"  cannot read {path}: {exc}")
                    continue
                return ReviewDecision("substitute", image)
            print("  unrecognized; a, r, or s <path>")

    return gate


def cmd_eval(args) -> int:
    out = Path(args.out)
    if args.ablations:
        report = run_ablations(args.n, args.seed, out)
        for row in report["runs"]:
            print(
                f"{row['name']:34s} post_color={row['post_color']} "
                f"post_counting={row['post_counting']} post_spatial={row['post_spatial']} "
                f"correction_rate_color={row['correction_rate_color']}"
            )
        for row in report["k_sweep"]:
            print(
                f"{row['name']:34s} max_outside={row['max_outside']} "
                f"mean_outside={row['mean_outside']}"
            )
        print(f"report: {out / 'report.json'}")
        return 0

    preset = NOISY_PRESET if args.noisy else {}
    config = EvalConfig(
        name="noisy" if args.noisy else "clean",
        verifier_enabled=not args.no_verifier,
        schedule=args.schedule,
        k_fraction=args.k_fraction,
        refine_steps=args.steps,
        latency=args.latency,
        seed=args.seed,
        **preset,
    )
    scenes = generate_suite(args.n, args.seed)
    result = run_suite(scenes, out / config.name, config)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    for key, value in sorted(result["aggregates"].items()):
        print(f"{key}: {value}")
    print(f"report: {out / 'report.json'}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    suite = _load_suite(args.backends)
    app = create_app(Orchestrator(args.root, suite))
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
