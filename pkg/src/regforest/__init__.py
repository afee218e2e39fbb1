"""Register-allocation-aware inference codegen for decision tree ensembles.

Trained trees spend their inference time bouncing between node records and
feature loads. This package plans which split values, node records, and
feature values deserve to live in CPU registers for a whole traversal,
generates tree-walking code around that plan (six strategies over two code
families), and emits assembly for x86-64 and AArch64 alongside a portable
interpreted form used for verification and benchmarking.
"""

from .errors import (
    LoweringError,
    PackError,
    PlanError,
    PlanMismatch,
    SchemaError,
    StructureError,
    ToolchainError,
    TrapError,
    ValidationError,
)
from .ir import (
    TreeProgram,
    build_ensemble_programs,
    build_ifelse_baseline,
    build_native_baseline,
    build_programs,
    build_tree_program,
)
from .kernel import active_kernel, kernel_bench, predict_batch, predict_one
from .model import (
    Ensemble,
    Node,
    Tree,
    ensemble_infer,
    load_model,
    logical_infer,
    serialize,
)
from .planner import EnsemblePlan, check_plan, plan_ensemble
from .profiler import annotate, ensemble_suitability, tree_suitability
from .program import EncodedProgram, encode
from .targets import AARCH64, ABSTRACT, TARGETS, X86_64, get_target
from .verifier import (
    brute_force_check,
    differential_check,
    interpret,
    mutation_check,
    residency_report,
)

__version__ = "0.1.0"

__all__ = [
    "AARCH64",
    "ABSTRACT",
    "EncodedProgram",
    "Ensemble",
    "EnsemblePlan",
    "LoweringError",
    "Node",
    "PackError",
    "PlanError",
    "PlanMismatch",
    "SchemaError",
    "StructureError",
    "TARGETS",
    "ToolchainError",
    "TrapError",
    "Tree",
    "TreeProgram",
    "ValidationError",
    "X86_64",
    "active_kernel",
    "annotate",
    "brute_force_check",
    "build_ensemble_programs",
    "build_ifelse_baseline",
    "build_native_baseline",
    "build_programs",
    "build_tree_program",
    "check_plan",
    "differential_check",
    "encode",
    "ensemble_infer",
    "ensemble_suitability",
    "get_target",
    "interpret",
    "kernel_bench",
    "load_model",
    "logical_infer",
    "mutation_check",
    "plan_ensemble",
    "predict_batch",
    "predict_one",
    "residency_report",
    "serialize",
    "tree_suitability",
]
