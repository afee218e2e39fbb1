"""Backend-independent pieces of assembly emission.

Every emitted function is C callable as `float f(const float *features)`
under the platform ABI. Programs of the native family also carry a node
record table in .rodata; records are 16 bytes: binary32 split (leaf:
prediction), u16 feature (leaf: the sentinel), u16 left, u16 right, and
six bytes of padding, little endian on both supported targets.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from ..errors import LoweringError
from ..ir import LoadNodeRecord, TreeProgram
from ..model import LEAF_SENTINEL, Tree, f32_bits


@dataclass(frozen=True, slots=True)
class EmittedUnit:
    symbol: str
    target: str
    text: str  # complete standalone assembly source (code + table)
    code_text: str  # function section only, standalone
    table_text: str | None  # record table section, standalone
    has_table: bool
    table_symbol: str | None
    clobbers: tuple[str, ...]  # caller-visible registers the function writes
    scratch: tuple[str, ...]  # fixed scratch set the lowering relies on


def make_unit(
    symbol: str,
    target: str,
    code_lines: list[str],
    table_lines: list[str] | None,
    note: str,
    clobbers,
    scratch,
    tsym: str | None,
) -> EmittedUnit:
    code = "\n".join(code_lines) + "\n"
    table = "\n".join(table_lines) + "\n" if table_lines else None
    note_line = note + "\n"
    return EmittedUnit(
        symbol=symbol,
        target=target,
        text=code + (table or "") + note_line,
        code_text=code + note_line,
        table_text=(table + note_line) if table else None,
        has_table=table is not None,
        table_symbol=tsym,
        clobbers=tuple(clobbers),
        scratch=tuple(scratch),
    )


def table_symbol(symbol: str) -> str:
    return f"{symbol}_nodes"


def record_table_asm(tree: Tree, sym: str) -> list[str]:
    """.rodata lines for the record table. Directives are chosen to mean
    the same widths under both x86 and AArch64 gas (.4byte/.2byte)."""
    lines = [
        "\t.section .rodata",
        "\t.balign 16",
        # visible across translation units (tables may live in their own
        # file) but never preemptible, so PC-relative addressing links
        # into shared objects
        f"\t.globl {sym}",
        f"\t.hidden {sym}",
        f"{sym}:",
    ]
    for node in tree.nodes:
        if node.is_leaf:
            bits = f32_bits(node.prediction)
            feat, left, right = LEAF_SENTINEL, 0, 0
        else:
            bits = f32_bits(node.split_value)
            feat, left, right = node.feature_index, node.left_child, node.right_child
        lines.append(f"\t.4byte {bits:#010x}")
        lines.append(f"\t.2byte {feat}, {left}, {right}")
        lines.append("\t.zero 6")
    return lines


def uses_table(program: TreeProgram) -> bool:
    return any(isinstance(it, LoadNodeRecord) for it in program.items)


def lower(program: TreeProgram, target: str | None = None) -> EmittedUnit:
    """Lower one tree program to assembly for the given target (defaults to
    the target the plan was made for)."""
    name = target or program.target
    if name == "x86_64":
        from . import x86_64 as backend
    elif name == "aarch64":
        from . import aarch64 as backend
    elif name == "abstract":
        raise LoweringError(
            "the abstract target runs in the interpreter only; "
            "lower against x86_64 or aarch64"
        )
    else:
        raise LoweringError(f"no backend for target {name!r}")
    if program.target != name:
        raise LoweringError(
            f"program was planned for {program.target!r}; "
            f"replan for {name!r} instead of relowering"
        )
    return backend.lower_program(program)


def emit_to_dir(
    programs: list[TreeProgram],
    out_dir: str,
    meta: dict | None = None,
) -> dict:
    """Write one code .s per tree, the record tables in a shared data .s,
    and a manifest.json describing the batch."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    table_parts: list[str] = []
    scratch: tuple[str, ...] = ()
    for program in programs:
        unit = lower(program)
        fname = f"{unit.symbol}.s"
        with open(os.path.join(out_dir, fname), "w") as fh:
            fh.write(unit.code_text)
        if unit.table_text is not None:
            table_parts.append(unit.table_text)
        scratch = unit.scratch
        entries.append(
            {
                "tree": program.tree_index,
                "symbol": unit.symbol,
                "file": fname,
                "table_symbol": unit.table_symbol,
                "clobbers": list(unit.clobbers),
            }
        )
    manifest = dict(meta or {})
    if table_parts:
        with open(os.path.join(out_dir, "tables.s"), "w") as fh:
            fh.write("".join(table_parts))
        manifest["tables_file"] = "tables.s"
    manifest["scratch"] = list(scratch)
    manifest["trees"] = entries
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest
