"""Random ensemble generation with feasible splits and plausible branch counts.

Split values are drawn inside the interval that the path so far leaves open
for the chosen feature, the way a trained tree's thresholds narrow down, so
every leaf is reachable by some input. Branch counts are drawn per node and
propagated downward; occasional zero-count subtrees are produced on purpose
to exercise the probability fallback.
"""

from __future__ import annotations

import math

import numpy as np

from .model import Ensemble, Node, Tree, as_f32, validate_tree

F32_LO = -100.0
F32_HI = 100.0


def _next_up(x: float) -> float:
    return float(np.nextafter(np.float32(x), np.float32(np.inf)))


def _next_down(x: float) -> float:
    return float(np.nextafter(np.float32(x), np.float32(-np.inf)))


def random_tree(
    rng: np.random.Generator,
    max_depth: int = 8,
    num_features: int = 4,
    leaf_prob: float = 0.25,
    root_count: int = 1000,
    zero_count_prob: float = 0.02,
) -> Tree:
    """Grow one tree. max_depth counts nodes along a path, so max_depth=1 is a leaf."""
    nodes: list[Node] = []

    def grow(depth_left: int, intervals: list[tuple[float, float]], count: int) -> int:
        node_id = len(nodes)
        nodes.append(None)  # reserve the slot; children get higher ids
        open_feats = [i for i, (lo, hi) in enumerate(intervals) if _next_up(lo) < hi]
        if depth_left <= 1 or not open_feats or (node_id > 0 and rng.random() < leaf_prob):
            nodes[node_id] = Node(
                id=node_id, kind="leaf", prediction=as_f32(rng.random())
            )
            return node_id
        feat = int(rng.choice(open_feats))
        lo, hi = intervals[feat]
        # keep a representable value on each side: split in [lo, prev(hi))
        split = as_f32(lo + rng.random() * (hi - lo))
        if split >= hi:
            split = _next_down(hi)
        if split < lo:
            split = lo
        if rng.random() < zero_count_prob:
            left_count = right_count = 0
        else:
            left_count = int(rng.integers(0, count + 1)) if count > 0 else 0
            right_count = count - left_count
            if left_count + right_count == 0:
                left_count = 1
                right_count = 1
        left_iv = list(intervals)
        left_iv[feat] = (lo, split)
        right_iv = list(intervals)
        right_iv[feat] = (_next_up(split), hi)
        left_id = grow(depth_left - 1, left_iv, left_count)
        right_id = grow(depth_left - 1, right_iv, right_count)
        nodes[node_id] = Node(
            id=node_id,
            kind="inner",
            feature_index=feat,
            split_value=split,
            left_child=left_id,
            right_child=right_id,
            left_count=left_count,
            right_count=right_count,
        )
        return node_id

    intervals = [(F32_LO, F32_HI)] * num_features
    grow(max_depth, intervals, root_count)
    return validate_tree(nodes, num_features)


def random_ensemble(
    seed: int,
    num_trees: int = 1,
    max_depth: int = 8,
    num_features: int = 4,
    aggregation: str = "average",
    leaf_prob: float = 0.25,
) -> Ensemble:
    rng = np.random.default_rng(seed)
    trees = tuple(
        random_tree(rng, max_depth=max_depth, num_features=num_features, leaf_prob=leaf_prob)
        for _ in range(num_trees)
    )
    return Ensemble(trees=trees, num_features=num_features, aggregation=aggregation)


def random_inputs(rng: np.random.Generator, count: int, num_features: int) -> np.ndarray:
    """Feature rows spanning the split range, binary32."""
    lo, hi = F32_LO * 1.2, F32_HI * 1.2
    return (rng.random((count, num_features)) * (hi - lo) + lo).astype(np.float32)


def leaf_reaching_inputs(tree: Tree, num_features: int) -> list[tuple[int, np.ndarray]]:
    """One synthesized input per leaf, pinned to the branch boundaries.

    Along the path to each leaf the open interval per feature is intersected;
    the emitted value sits exactly on a split for a left turn (<= boundary)
    or one binary32 ulp above for a right turn. Returns (leaf id, features)
    pairs; infeasible leaves (contradictory constraints) are omitted, which
    cannot happen for trees grown by random_tree.
    """
    out: list[tuple[int, np.ndarray]] = []
    base = np.zeros(num_features, dtype=np.float32)

    def walk(node_id: int, lo: dict[int, float], hi: dict[int, float]):
        node = tree.nodes[node_id]
        if node.is_leaf:
            row = base.copy()
            for f in set(lo) | set(hi):
                a = lo.get(f, -math.inf)
                b = hi.get(f, math.inf)
                if a > b:
                    return
                if b != math.inf:
                    row[f] = np.float32(b)  # lands exactly on the tightest split
                else:
                    row[f] = np.float32(a)
            out.append((node_id, row))
            return
        f, s = node.feature_index, node.split_value
        new_hi = dict(hi)
        new_hi[f] = min(hi.get(f, math.inf), s)
        walk(node.left_child, lo, new_hi)
        new_lo = dict(lo)
        new_lo[f] = max(lo.get(f, -math.inf), _next_up(s))
        walk(node.right_child, new_lo, hi)

    walk(0, {}, {})
    return out
