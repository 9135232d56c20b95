"""Self-correcting scene pipeline.

Give it an image and the description it was generated from; it decomposes
the description into object-level constraints, checks each one with vision
and language backends, corrects what fails (counts first, then attributes
and positions in parallel loops with verification), and stitches the
accepted patches back together with masked latent smoothing so the rest of
the frame stays put.
"""
from .backends import BackendSuite, Image, MockConfig, build_mock_suite, suite_from_config
from .decomposer import DecomposerConfig, decompose
from .evaluation import EvalConfig, generate_suite, run_ablations, run_suite, score
from .loop import LoopConfig, ReviewCandidate, ReviewDecision, SubtaskResult, run_loop
from .orchestrator import JobOptions, JobRecord, Orchestrator
from .scene import SceneSpec, Subtask, to_subtasks, validate
from .service import create_app
from .stitching import CompositeMask, RefineConfig, assemble, refine

__version__ = "0.1.0"

__all__ = [
    "BackendSuite",
    "CompositeMask",
    "DecomposerConfig",
    "EvalConfig",
    "Image",
    "JobOptions",
    "JobRecord",
    "LoopConfig",
    "MockConfig",
    "Orchestrator",
    "RefineConfig",
    "ReviewCandidate",
    "ReviewDecision",
    "SceneSpec",
    "SubtaskResult",
    "Subtask",
    "assemble",
    "build_mock_suite",
    "create_app",
    "decompose",
    "generate_suite",
    "refine",
    "run_ablations",
    "run_loop",
    "run_suite",
    "score",
    "suite_from_config",
    "to_subtasks",
    "validate",
    "__version__",
]
