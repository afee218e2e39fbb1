"""Command line front end. One subcommand: export."""

from __future__ import annotations

import argparse
import sys

from .export import DEPTH_GRID, TREE_GRID, ExportError, ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forestexport",
        description="Train a random forest and export it as regforest model JSON.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="train on a CSV and write model JSON plus sidecar vectors")
    p.add_argument("--data", required=True, help="training CSV, with or without a header row")
    p.add_argument(
        "--label",
        required=True,
        help="label column name, or 0-based column index for headerless files",
    )
    p.add_argument("--trees", type=int, required=True, choices=TREE_GRID)
    p.add_argument("--depth", type=int, required=True, choices=DEPTH_GRID)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model JSON path; the sidecar lands next to it")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(
            data=args.data,
            label=args.label,
            trees=args.trees,
            depth=args.depth,
            out=args.out,
            seed=args.seed,
        )
        result = export(job)
    except (ExportError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(
        f"wrote {result.model_path} "
        f"({result.num_trees} trees, {result.total_nodes} nodes, {result.aggregation})"
    )
    print(f"wrote {result.sidecar_path} ({result.vectors} vectors, {result.excluded} excluded)")
    return 0


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    sys.exit(main())
