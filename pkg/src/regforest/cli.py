"""Command line interface.

Subcommands mirror the pipeline stages: profile a model, plan register
residency, emit assembly, verify against the oracle, benchmark on the
host, plus small utilities for generating models and datasets and for
comparing the two batch kernels.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backends import emit_to_dir
from .bench import BenchConfig, run_bench
from .errors import ToolchainError, ValidationError
from .ir import build_ensemble_programs
from .kernel import active_kernel, kernel_bench
from .model import load_model, logical_infer, serialize
from .planner import PACK_FULL, PACK_SPLIT, plan_document, plan_ensemble
from .profiler import profile_document
from .program import encode
from .randtrees import random_ensemble, random_inputs
from .targets import TARGETS
from .verifier import differential_check

ALL_STRATEGIES = ("sf", "df", "nn", "hn", "hl", "in")


def _read_model(path: str):
    return load_model(Path(path).read_text())


def _write_out(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv_ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip() != "")


def _csv_strs(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip() != "")


def _add_common_plan_args(p: argparse.ArgumentParser, machine_only: bool = False) -> None:
    p.add_argument("--strategy", required=True, choices=ALL_STRATEGIES)
    p.add_argument("--registers", "-k", type=int, required=True)
    p.add_argument("--pack", choices=(PACK_FULL, PACK_SPLIT), default=PACK_FULL)
    if machine_only:
        p.add_argument("--target", choices=("x86_64", "aarch64"), default="x86_64")
    else:
        p.add_argument("--target", choices=tuple(TARGETS), default="abstract")


def cmd_profile(args) -> int:
    ensemble = _read_model(args.model)
    _write_out(json.dumps(profile_document(ensemble), indent=2) + "\n", args.out)
    return 0


def cmd_plan(args) -> int:
    ensemble = _read_model(args.model)
    plan = plan_ensemble(
        ensemble, args.strategy, args.registers, args.target, args.pack
    )
    _write_out(json.dumps(plan_document(plan), indent=2) + "\n", args.out)
    return 0


def cmd_emit(args) -> int:
    ensemble = _read_model(args.model)
    plan, programs = build_ensemble_programs(
        ensemble, args.strategy, args.registers, target=args.target, pack=args.pack
    )
    meta = {
        "model": args.model,
        "strategy": plan.strategy,
        "registers": plan.effective_registers,
        "pack": plan.pack,
        "target": plan.target,
    }
    manifest = emit_to_dir(programs, args.out, meta=meta)
    print(f"wrote {len(manifest['trees'])} units to {args.out}")
    return 0


def _check_sidecar(ensemble, path: str) -> dict:
    doc = json.loads(Path(path).read_text())
    inputs = doc["inputs"]
    expected = doc["per_tree_predictions"]
    mismatches = 0
    first = None
    for i, (row, preds) in enumerate(zip(inputs, expected)):
        for t, tree in enumerate(ensemble.trees):
            got = logical_infer(tree, row)
            if got != preds[t]:
                mismatches += 1
                if first is None:
                    first = f"input {i} tree {t}: expected {preds[t]!r}, got {got!r}"
    return {
        "file": path,
        "vectors": len(inputs),
        "mismatches": mismatches,
        "first_mismatch": first,
        "ok": mismatches == 0,
    }


def cmd_verify(args) -> int:
    ensemble = _read_model(args.model)
    strategies = _csv_strs(args.strategy) if args.strategy else ALL_STRATEGIES
    registers = _csv_ints(args.registers)
    rows = random_inputs(
        np.random.default_rng(args.seed), args.inputs, ensemble.num_features
    )
    report: dict = {
        "model": args.model,
        "target": args.target,
        "pack": args.pack,
        "inputs": args.inputs,
        "seed": args.seed,
        "kernel": active_kernel(),
        "checks": [],
    }
    ok = True
    for strategy in strategies:
        for k in registers:
            diff = differential_check(
                ensemble, strategy, k, rows, target=args.target, pack=args.pack
            )
            ok = ok and diff.ok
            report["checks"].append(
                {
                    "strategy": diff.strategy,
                    "registers": diff.k,
                    "pack": diff.pack,
                    "trees": diff.trees,
                    "inputs": diff.inputs,
                    "mismatches": diff.mismatches,
                    "event_violations": diff.event_violations,
                    "first_mismatch": diff.first_mismatch,
                    "ok": diff.ok,
                }
            )
    if args.sidecar:
        side = _check_sidecar(ensemble, args.sidecar)
        report["sidecar"] = side
        ok = ok and side["ok"]
    report["ok"] = ok
    _write_out(json.dumps(report, indent=2) + "\n", args.out)
    return 0 if ok else 1


def cmd_bench(args) -> int:
    config = BenchConfig(
        model=args.model,
        data=tuple(args.data),
        strategies=_csv_strs(args.strategies),
        registers=_csv_ints(args.registers),
        reps=args.reps,
        batch_size=args.batch_size,
        target=args.target,
        pack=args.pack,
        cc=args.cc,
        workdir=args.workdir,
    )
    try:
        report = run_bench(config)
    except (ValidationError, ToolchainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.out:
        Path(args.out).write_text(report.to_csv())
        print(f"wrote {args.out}")
    for row in report.rows:
        alt = (
            f"  (vs ifelse {row.normalized_ifelse:.3f})"
            if row.normalized_ifelse is not None
            else ""
        )
        print(
            f"{row.strategy:>6} k={row.k:<3} {row.dataset:<12} "
            f"normalized {row.normalized:.3f} vs {row.baseline}{alt}"
        )
    for (strategy, size_class), value in sorted(report.geomeans.items()):
        print(f"geomean {strategy}/{size_class}: {value:.3f}")
    return 0


def cmd_gen_model(args) -> int:
    ensemble = random_ensemble(
        seed=args.seed,
        num_trees=args.trees,
        max_depth=args.depth,
        num_features=args.features,
    )
    _write_out(serialize(ensemble, indent=2) + "\n", args.out)
    return 0


def cmd_gen_data(args) -> int:
    ensemble = _read_model(args.model)
    rows = random_inputs(
        np.random.default_rng(args.seed), args.count, ensemble.num_features
    )
    text = "\n".join(",".join(f"{v:.8g}" for v in row) for row in rows) + "\n"
    _write_out(text, args.out)
    return 0


def cmd_kernel_bench(args) -> int:
    ensemble = _read_model(args.model)
    rows = random_inputs(
        np.random.default_rng(args.seed), args.count, ensemble.num_features
    )
    _, programs = build_ensemble_programs(
        ensemble, args.strategy, args.registers, pack=args.pack
    )
    encoded = [encode(p) for p in programs]
    results = kernel_bench(encoded, rows, reps=args.reps)
    print(json.dumps(results, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regforest",
        description="register-allocating inference code generator for tree ensembles",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="per-node probabilities and feature suitability")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("plan", help="compute register residency for one strategy")
    p.add_argument("--model", required=True)
    _add_common_plan_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("emit", help="lower an ensemble to assembly files")
    p.add_argument("--model", required=True)
    _add_common_plan_args(p, machine_only=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("verify", help="differential check against the logical model")
    p.add_argument("--model", required=True)
    p.add_argument("--strategy", help="comma list, default all six")
    p.add_argument("--registers", "-k", default="8", help="comma list of budgets")
    p.add_argument("--inputs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pack", choices=(PACK_FULL, PACK_SPLIT), default=PACK_FULL)
    p.add_argument("--target", choices=tuple(TARGETS), default="abstract")
    p.add_argument("--sidecar", help="exporter sidecar JSON to cross-check")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="measure normalized execution time on this host")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, nargs="+", help="CSV feature rows")
    p.add_argument("--strategies", default=",".join(ALL_STRATEGIES))
    p.add_argument("--registers", default="5,10,20")
    p.add_argument("--reps", type=int, default=8)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--target", choices=("x86_64", "aarch64"), default="x86_64")
    p.add_argument("--pack", choices=(PACK_FULL, PACK_SPLIT), default=PACK_FULL)
    p.add_argument("--cc", help="compiler override (or env REGFOREST_CC)")
    p.add_argument("--workdir")
    p.add_argument("--out", help="CSV report path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-model", help="write a random ensemble as model JSON")
    p.add_argument("--trees", type=int, default=10)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--features", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("gen-data", help="write random feature rows as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("kernel-bench", help="compare compiled and pure-Python kernels")
    p.add_argument("--model", required=True)
    p.add_argument("--strategy", choices=ALL_STRATEGIES, default="nn")
    p.add_argument("--registers", "-k", type=int, default=8)
    p.add_argument("--pack", choices=(PACK_FULL, PACK_SPLIT), default=PACK_FULL)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(func=cmd_kernel_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
