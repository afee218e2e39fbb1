"""Portable C sources for the two basic tree implementations.

These are the normalization anchors the benchmark divides by. They get
compiled by the system compiler at default settings, so the code stays
deliberately plain: a record-table loop for the native form, a flat
goto chain for the if-else form (nested braces would trip compiler
nesting limits on deep trees).

Split and prediction constants are materialized from their exact bit
patterns; spelling them as decimal literals would round-trip through
the compiler's parser and could disagree with the planner's binary32
values.
"""

from __future__ import annotations

from ..model import LEAF_SENTINEL, Tree, f32_bits

BASELINE_KINDS = ("native", "ifelse")

_HELPERS = """\
#include <stdint.h>
#include <string.h>

static float fbits(uint32_t b) { float f; memcpy(&f, &b, 4); return f; }
"""


def baseline_symbol(tree_index: int, kind: str) -> str:
    return f"forest_tree_{tree_index}_{kind}"


def _native_body(tree: Tree, sym: str) -> list[str]:
    rows = []
    for node in tree.nodes:
        if node.is_leaf:
            rows.append(
                f"    {{0x{f32_bits(node.prediction):08X}u, 0x{LEAF_SENTINEL:04X}u, 0, 0, {{0}}}},"
            )
        else:
            rows.append(
                f"    {{0x{f32_bits(node.split_value):08X}u, {node.feature_index}, "
                f"{node.left_child}, {node.right_child}, {{0}}}},"
            )
    return [
        "typedef struct {",
        "    uint32_t split;",
        "    uint16_t feat, left, right;",
        "    uint8_t pad[6];",
        "} node_rec;",
        "",
        f"static const node_rec {sym}_nodes[] = {{",
        *rows,
        "};",
        "",
        f"float {sym}(const float *x) {{",
        "    uint16_t i = 0;",
        "    for (;;) {",
        f"        node_rec n = {sym}_nodes[i];",
        "        if (n.feat == 0xFFFFu) return fbits(n.split);",
        "        i = (x[n.feat] <= fbits(n.split)) ? n.left : n.right;",
        "    }",
        "}",
    ]


def _ifelse_body(tree: Tree, sym: str) -> list[str]:
    lines = [f"float {sym}(const float *x) {{"]
    if len(tree.nodes) == 1:
        # lone leaf: nothing reads the features
        lines.append("    (void)x;")
    stack = [tree.root.id]
    while stack:
        nid = stack.pop()
        node = tree.nodes[nid]
        if nid != tree.root.id:
            lines.append(f"n{nid}:")
        if node.is_leaf:
            lines.append(f"    return fbits(0x{f32_bits(node.prediction):08X}u);")
        else:
            lines.append(
                f"    if (x[{node.feature_index}] <= fbits(0x{f32_bits(node.split_value):08X}u)) "
                f"goto n{node.left_child}; else goto n{node.right_child};"
            )
            stack.append(node.right_child)
            stack.append(node.left_child)
    lines.append("}")
    return lines


def emit_baseline_source(tree: Tree, kind: str, tree_index: int = 0) -> str:
    """Self-contained C translation unit for one tree's basic implementation."""
    if kind not in BASELINE_KINDS:
        raise ValueError(f"kind must be one of {BASELINE_KINDS}, got {kind!r}")
    sym = baseline_symbol(tree_index, kind)
    body = _native_body(tree, sym) if kind == "native" else _ifelse_body(tree, sym)
    return _HELPERS + "\n" + "\n".join(body) + "\n"
