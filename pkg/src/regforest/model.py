"""In-memory decision tree ensemble model, JSON (de)serialization, validation.

Trees are arrays of nodes; node ids are array positions and node 0 is the
root. Inner nodes route an input left when ``features[feature_index] <=
split_value`` (binary32 comparison) and right otherwise, so a feature equal
to the split goes left and a NaN feature goes right. Split values and
predictions are binary32; they are stored here as the exactly-equal Python
float and serialized as the shortest decimal that round-trips the binary32.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError, StructureError

LEAF_SENTINEL = 0xFFFF  # feature_index value marking a leaf in packed/record forms

_NODE_FIELDS = {
    "id",
    "kind",
    "feature_index",
    "split_value",
    "left_child",
    "right_child",
    "prediction",
    "left_count",
    "right_count",
}
_TOP_FIELDS = {"num_features", "aggregation", "trees"}


def as_f32(x: float) -> float:
    """Round to binary32 and return the exactly-equal double."""
    return float(np.float32(x))


def f32_repr(x: float) -> str:
    """Shortest decimal string that round-trips the binary32 value of ``x``."""
    return np.format_float_positional(np.float32(x), unique=True, trim="0")


@dataclass(frozen=True, slots=True)
class Node:
    id: int
    kind: str  # "inner" | "leaf"
    feature_index: int | None = None
    split_value: float | None = None
    left_child: int | None = None
    right_child: int | None = None
    prediction: float | None = None
    left_count: int = 0
    right_count: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.kind == "leaf"


@dataclass(frozen=True, slots=True)
class Tree:
    nodes: tuple[Node, ...]
    # parent[i] is the parent node id of i, -1 for the root; filled by validate_tree
    parents: tuple[int, ...] = field(default=(), compare=False)

    @property
    def root(self) -> Node:
        return self.nodes[0]

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True, slots=True)
class Ensemble:
    trees: tuple[Tree, ...]
    num_features: int
    aggregation: str = "average"  # "average" | "majority"


def make_leaf(node_id: int, prediction: float) -> Node:
    return Node(id=node_id, kind="leaf", prediction=as_f32(prediction))


def make_inner(
    node_id: int,
    feature_index: int,
    split_value: float,
    left_child: int,
    right_child: int,
    left_count: int = 0,
    right_count: int = 0,
) -> Node:
    return Node(
        id=node_id,
        kind="inner",
        feature_index=feature_index,
        split_value=as_f32(split_value),
        left_child=left_child,
        right_child=right_child,
        left_count=left_count,
        right_count=right_count,
    )


def validate_tree(nodes: list[Node], num_features: int) -> Tree:
    """Check node-level and graph-level invariants; return the Tree with parents."""
    if not nodes:
        raise StructureError("tree has no nodes")
    n = len(nodes)
    for node in nodes:
        if node.kind == "inner":
            if node.feature_index is None or node.split_value is None:
                raise SchemaError(f"inner node {node.id} missing feature/split")
            if node.left_child is None or node.right_child is None:
                raise SchemaError(f"inner node {node.id} missing a child")
            if node.prediction is not None:
                raise SchemaError(f"inner node {node.id} carries a prediction")
            if not (0 <= node.feature_index < num_features):
                raise StructureError(
                    f"node {node.id}: feature {node.feature_index} out of range"
                )
            if not math.isfinite(node.split_value):
                raise ValueError(f"node {node.id}: non-finite split value")
            if node.left_count < 0 or node.right_count < 0:
                raise ValueError(f"node {node.id}: negative branch count")
            for child in (node.left_child, node.right_child):
                if not (0 <= child < n):
                    raise StructureError(f"node {node.id}: child index {child} out of range")
        elif node.kind == "leaf":
            if node.prediction is None:
                raise SchemaError(f"leaf node {node.id} missing prediction")
            if (
                node.feature_index is not None
                or node.split_value is not None
                or node.left_child is not None
                or node.right_child is not None
            ):
                raise SchemaError(f"leaf node {node.id} carries inner-node fields")
            if not math.isfinite(node.prediction):
                raise ValueError(f"node {node.id}: non-finite prediction")
        else:
            raise SchemaError(f"node {node.id}: unknown kind {node.kind!r}")

    parents = [-1] * n
    for node in nodes:
        if node.kind != "inner":
            continue
        for child in (node.left_child, node.right_child):
            if child == 0:
                raise StructureError(f"node {node.id} points back at the root")
            if parents[child] != -1:
                raise StructureError(f"node {child} has two parents")
            parents[child] = node.id
    # parent uniqueness plus full reachability from node 0 rules out cycles
    seen = 1
    stack = [0]
    reached = bytearray(n)
    reached[0] = 1
    while stack:
        node = nodes[stack.pop()]
        if node.kind == "inner":
            for child in (node.left_child, node.right_child):
                if not reached[child]:
                    reached[child] = 1
                    seen += 1
                    stack.append(child)
    if seen != n:
        orphan = reached.index(0)
        raise StructureError(f"node {orphan} unreachable from the root")
    return Tree(nodes=tuple(nodes), parents=tuple(parents))


def _parse_node(obj: dict, position: int) -> Node:
    if not isinstance(obj, dict):
        raise SchemaError(f"node {position} is not an object")
    extra = set(obj) - _NODE_FIELDS
    if extra:
        raise SchemaError(f"node {position}: unknown fields {sorted(extra)}")
    node_id = obj.get("id", position)
    if node_id != position:
        raise SchemaError(f"node at position {position} declares id {node_id}")
    kind = obj.get("kind")
    if kind not in ("inner", "leaf"):
        raise SchemaError(f"node {position}: kind must be 'inner' or 'leaf'")

    def want_int(name, required=False, default=None):
        if name not in obj:
            if required:
                raise SchemaError(f"node {position}: missing {name}")
            return default
        v = obj[name]
        if isinstance(v, bool) or not isinstance(v, int):
            raise SchemaError(f"node {position}: {name} must be an integer")
        return v

    def want_real(name):
        if name not in obj:
            raise SchemaError(f"node {position}: missing {name}")
        v = obj[name]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"node {position}: {name} must be a number")
        return as_f32(float(v))

    if kind == "inner":
        return Node(
            id=position,
            kind="inner",
            feature_index=want_int("feature_index", required=True),
            split_value=want_real("split_value"),
            left_child=want_int("left_child", required=True),
            right_child=want_int("right_child", required=True),
            left_count=want_int("left_count", default=0),
            right_count=want_int("right_count", default=0),
        )
    for banned in ("feature_index", "split_value", "left_child", "right_child", "left_count", "right_count"):
        if banned in obj:
            raise SchemaError(f"leaf node {position} carries {banned}")
    return Node(id=position, kind="leaf", prediction=want_real("prediction"))


def load_model(data: bytes | str) -> Ensemble:
    """Parse and validate the canonical model JSON document."""
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise SchemaError(f"not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object")
    extra = set(doc) - _TOP_FIELDS
    if extra:
        raise SchemaError(f"unknown top-level fields {sorted(extra)}")
    for name in _TOP_FIELDS:
        if name not in doc:
            raise SchemaError(f"missing top-level field {name!r}")
    num_features = doc["num_features"]
    if isinstance(num_features, bool) or not isinstance(num_features, int) or num_features < 0:
        raise SchemaError("num_features must be a non-negative integer")
    aggregation = doc["aggregation"]
    if aggregation not in ("average", "majority"):
        raise SchemaError("aggregation must be 'average' or 'majority'")
    if not isinstance(doc["trees"], list) or not doc["trees"]:
        raise SchemaError("trees must be a non-empty array")
    trees = []
    for t_index, t_obj in enumerate(doc["trees"]):
        if not isinstance(t_obj, dict) or set(t_obj) != {"nodes"}:
            raise SchemaError(f"tree {t_index} must be an object with a 'nodes' array")
        if not isinstance(t_obj["nodes"], list):
            raise SchemaError(f"tree {t_index}: nodes must be an array")
        nodes = [_parse_node(n, i) for i, n in enumerate(t_obj["nodes"])]
        trees.append(validate_tree(nodes, num_features))
    return Ensemble(trees=tuple(trees), num_features=num_features, aggregation=aggregation)


def _node_doc(node: Node) -> dict:
    if node.is_leaf:
        return {"id": node.id, "kind": "leaf", "prediction": float(f32_repr(node.prediction))}
    return {
        "id": node.id,
        "kind": "inner",
        "feature_index": node.feature_index,
        "split_value": float(f32_repr(node.split_value)),
        "left_child": node.left_child,
        "right_child": node.right_child,
        "left_count": node.left_count,
        "right_count": node.right_count,
    }


def serialize(ensemble: Ensemble, indent: int | None = None) -> str:
    doc = {
        "num_features": ensemble.num_features,
        "aggregation": ensemble.aggregation,
        "trees": [{"nodes": [_node_doc(n) for n in t.nodes]} for t in ensemble.trees],
    }
    return json.dumps(doc, indent=indent)


def logical_infer(tree: Tree, features) -> float:
    """Walk the tree from the root, returning the reached leaf's prediction."""
    node = tree.nodes[0]
    while not node.is_leaf:
        f = as_f32(features[node.feature_index])
        node = tree.nodes[node.left_child if f <= node.split_value else node.right_child]
    return node.prediction


def logical_trace(tree: Tree, features) -> list[int]:
    """Node id sequence visited by logical_infer (root through leaf)."""
    node = tree.nodes[0]
    visited = [0]
    while not node.is_leaf:
        f = as_f32(features[node.feature_index])
        node = tree.nodes[node.left_child if f <= node.split_value else node.right_child]
        visited.append(node.id)
    return visited


def ensemble_infer(ensemble: Ensemble, features) -> float:
    preds = [logical_infer(t, features) for t in ensemble.trees]
    if ensemble.aggregation == "average":
        return sum(preds) / len(preds)
    counts: dict[float, int] = {}
    for p in preds:
        counts[p] = counts.get(p, 0) + 1
    best = max(counts.values())
    return min(p for p, c in counts.items() if c == best)


def depth(tree: Tree) -> int:
    """Longest root-to-leaf path measured in nodes (a lone leaf has depth 1)."""
    best = 0
    stack = [(0, 1)]
    while stack:
        node_id, d = stack.pop()
        node = tree.nodes[node_id]
        if node.is_leaf:
            best = max(best, d)
        else:
            stack.append((node.left_child, d + 1))
            stack.append((node.right_child, d + 1))
    return best


def path(tree: Tree, node_id: int) -> list[int]:
    """Root-to-node id list following parent links."""
    out = [node_id]
    while tree.parents[out[-1]] != -1:
        out.append(tree.parents[out[-1]])
    out.reverse()
    return out


def leaves(tree: Tree) -> list[Node]:
    return [n for n in tree.nodes if n.is_leaf]


def inner_nodes(tree: Tree) -> list[Node]:
    return [n for n in tree.nodes if not n.is_leaf]


def node_depths(tree: Tree) -> tuple[int, ...]:
    """Depth of every node, root at 0."""
    d = [0] * len(tree.nodes)
    stack = [0]
    while stack:
        node = tree.nodes[stack.pop()]
        if not node.is_leaf:
            d[node.left_child] = d[node.id] + 1
            d[node.right_child] = d[node.id] + 1
            stack.append(node.left_child)
            stack.append(node.right_child)
    return tuple(d)


def f32_bits(x: float) -> int:
    """Bit pattern of x rounded to binary32, as an unsigned 32 bit int."""
    return int(np.float32(x).view(np.uint32))


def f32_from_bits(bits: int) -> float:
    return float(np.uint32(bits).view(np.float32))
