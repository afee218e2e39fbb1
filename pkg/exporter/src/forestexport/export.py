"""Train a random forest on a CSV dataset and export it as model JSON.

The exporter stays on its own side of the model format: it writes the
JSON document plus a sidecar of test vectors, and never imports the
inference package. Branch counts are the framework's per-node
training-sample tallies, so for every inner node left_count +
right_count equals the number of training rows that reached it.

Thresholds are trained in float64 but the model format is binary32, so
they are cast at export time. An input that falls between a threshold
and its cast can route differently under the two, which would make the
sidecar predictions unreachable by the exported model; such inputs are
detected by replaying routing both ways and are dropped from the
sidecar, with the drop count recorded in the file.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor

TREE_GRID = (1, 10, 25, 50, 100)
DEPTH_GRID = (5, 10, 15, 20)
SIDECAR_VECTORS = 1000


class ExportError(Exception):
    """The job is malformed or the trained forest cannot be exported."""


@dataclass(frozen=True)
class ExportJob:
    """One training-plus-export run.

    ``label`` is a header column name, or a 0-based column index for
    headerless files. Hyperparameters are restricted to the supported
    grid so exported artifacts stay comparable across runs.
    """

    data: str
    label: str
    trees: int
    depth: int
    out: str
    seed: int = 0

    def __post_init__(self) -> None:
        if self.trees not in TREE_GRID:
            raise ExportError(f"trees must be one of {list(TREE_GRID)}, got {self.trees}")
        if self.depth not in DEPTH_GRID:
            raise ExportError(f"depth must be one of {list(DEPTH_GRID)}, got {self.depth}")
        if self.seed < 0:
            raise ExportError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class ExportResult:
    model_path: str
    sidecar_path: str
    num_trees: int
    total_nodes: int
    aggregation: str
    vectors: int
    excluded: int


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _read_csv(path: str) -> tuple[list[str] | None, np.ndarray]:
    """Read a numeric CSV; the header row, if any, is detected by parse failure."""
    with open(path, newline="") as fh:
        first = fh.readline()
    if not first.strip():
        raise ExportError(f"{path}: empty file")
    cells = next(csv.reader([first]))
    header = None if all(_is_number(c) for c in cells) else [c.strip() for c in cells]
    try:
        data = np.loadtxt(
            path, delimiter=",", skiprows=1 if header else 0, ndmin=2, dtype=np.float64
        )
    except ValueError as e:
        raise ExportError(f"{path}: {e}") from e
    if data.size == 0:
        raise ExportError(f"{path}: no data rows")
    return header, data


def _label_index(header: list[str] | None, label: str, ncols: int) -> int:
    if header is not None:
        if label in header:
            return header.index(label)
        raise ExportError(f"label column {label!r} not found; header has {header}")
    try:
        idx = int(label)
    except ValueError:
        raise ExportError(
            f"file has no header row, so label must be a column index, got {label!r}"
        ) from None
    if not 0 <= idx < ncols:
        raise ExportError(f"label index {idx} out of range for {ncols} columns")
    return idx


def _tree_nodes(tree, classes) -> list[dict]:
    """Map one fitted tree's arrays onto schema node objects.

    ``classes`` is None for regression. An inner node stores the tallies
    of its two children; its own tally is their sum, which keeps count
    conservation checkable from the document alone.
    """
    left = np.asarray(tree.children_left)
    right = np.asarray(tree.children_right)
    feature = np.asarray(tree.feature)
    threshold = np.asarray(tree.threshold)
    value = np.asarray(tree.value)
    # Weighted tallies count bootstrap multiplicity, so the root tally is
    # exactly the training-set size; the unweighted array only counts
    # distinct drawn rows.
    counts = getattr(tree, "weighted_n_node_samples", None)
    if counts is None or len(counts) != len(left):
        raise ExportError("fitted tree is missing per-node sample counts")
    counts = np.asarray(counts, dtype=np.float64)
    if not np.all(counts == np.round(counts)):
        raise ExportError("per-node sample counts are not whole numbers")
    nodes = []
    for i in range(len(left)):
        lc, rc = int(left[i]), int(right[i])
        if (lc < 0) != (rc < 0):
            raise ExportError(f"node {i}: non-binary split")
        if lc < 0:
            if classes is None:
                pred = float(value[i].ravel()[0])
            else:
                pred = float(classes[int(np.argmax(value[i].ravel()))])
            nodes.append({"id": i, "kind": "leaf", "prediction": float(np.float32(pred))})
        else:
            nodes.append(
                {
                    "id": i,
                    "kind": "inner",
                    "feature_index": int(feature[i]),
                    "split_value": float(np.float32(threshold[i])),
                    "left_child": lc,
                    "right_child": rc,
                    "left_count": int(counts[lc]),
                    "right_count": int(counts[rc]),
                }
            )
    return nodes


def _route(nodes: list[dict], rows: np.ndarray) -> np.ndarray:
    """Leaf id each row reaches under the exported binary32 thresholds.

    Ties go left and the operands are all binary32-exact, so this is the
    routing the inference side will reproduce.
    """
    n = len(nodes)
    feat = np.zeros(n, np.int64)
    thr = np.zeros(n, np.float64)
    left = np.zeros(n, np.int64)
    right = np.zeros(n, np.int64)
    inner = np.zeros(n, bool)
    for nd in nodes:
        if nd["kind"] == "inner":
            i = nd["id"]
            inner[i] = True
            feat[i] = nd["feature_index"]
            thr[i] = nd["split_value"]
            left[i] = nd["left_child"]
            right[i] = nd["right_child"]
    cur = np.zeros(len(rows), np.int64)
    while True:
        live = np.nonzero(inner[cur])[0]
        if live.size == 0:
            return cur
        at = cur[live]
        go_left = rows[live, feat[at]] <= thr[at]
        cur[live] = np.where(go_left, left[at], right[at])


def export(job: ExportJob) -> ExportResult:
    """Train, export the model document, and write the sidecar vectors.

    Deterministic for a fixed job: the same seed drives the row shuffle,
    the forest, and the synthesized sidecar rows.
    """
    header, data = _read_csv(job.data)
    label_at = _label_index(header, job.label, data.shape[1])
    y = data[:, label_at]
    X = np.delete(data, label_at, axis=1)
    if X.shape[1] == 0:
        raise ExportError("dataset has no feature columns")

    # Hold real rows out of training for the sidecar where the dataset
    # can spare them; the shortfall is synthesized from the training
    # feature ranges.
    rng = np.random.default_rng(job.seed)
    perm = rng.permutation(len(X))
    held = min(SIDECAR_VECTORS, len(X) // 2)
    hold_rows = X[perm[:held]]
    X_train, y_train = X[perm[held:]], y[perm[held:]]

    classify = bool(np.all(np.isfinite(y_train)) and np.all(y_train == np.floor(y_train)))
    kind = RandomForestClassifier if classify else RandomForestRegressor
    forest = kind(n_estimators=job.trees, max_depth=job.depth, random_state=job.seed)
    forest.fit(X_train, y_train)
    classes = forest.classes_ if classify else None

    trees = [_tree_nodes(est.tree_, classes) for est in forest.estimators_]
    doc = {
        "num_features": int(X.shape[1]),
        "aggregation": "majority" if classify else "average",
        "trees": [{"nodes": nodes} for nodes in trees],
    }
    model_path = Path(job.out)
    model_path.write_text(json.dumps(doc, separators=(",", ":")) + "\n")

    need = SIDECAR_VECTORS - held
    lo, hi = X_train.min(axis=0), X_train.max(axis=0)
    synth = rng.uniform(lo, hi, size=(need, X.shape[1]))
    # Round-tripping through binary32 makes the serialized floats exact,
    # so both sides compare identical values.
    candidates = np.vstack([hold_rows, synth]).astype(np.float32).astype(np.float64)

    skl_leaves = forest.apply(candidates)
    ours = np.column_stack([_route(nodes, candidates) for nodes in trees])
    changed = (skl_leaves != ours).any(axis=1)
    kept = candidates[~changed]
    kept_leaves = ours[~changed]

    preds = []
    for t, nodes in enumerate(trees):
        values = np.zeros(len(nodes))
        for nd in nodes:
            if nd["kind"] == "leaf":
                values[nd["id"]] = nd["prediction"]
        preds.append(values[kept_leaves[:, t]])
    per_tree = np.column_stack(preds)

    side = {
        "inputs": [[float(v) for v in row] for row in kept],
        "per_tree_predictions": [[float(v) for v in row] for row in per_tree],
        "excluded": int(changed.sum()),
    }
    sidecar_path = model_path.with_name(model_path.stem + ".sidecar.json")
    sidecar_path.write_text(json.dumps(side) + "\n")

    return ExportResult(
        model_path=str(model_path),
        sidecar_path=str(sidecar_path),
        num_trees=len(trees),
        total_nodes=sum(len(n) for n in trees),
        aggregation=doc["aggregation"],
        vectors=len(kept),
        excluded=int(changed.sum()),
    )
