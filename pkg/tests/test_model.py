import json
import math

import numpy as np
import pytest

from regforest.errors import SchemaError, StructureError
from regforest.model import (
    LEAF_SENTINEL,
    Ensemble,
    depth,
    ensemble_infer,
    f32_bits,
    f32_from_bits,
    leaves,
    load_model,
    logical_infer,
    logical_trace,
    make_inner,
    make_leaf,
    node_depths,
    serialize,
    validate_tree,
)


def test_round_trip(t1_ensemble):
    doc = serialize(t1_ensemble)
    again = load_model(doc)
    assert again == t1_ensemble


def test_load_model_rejects_bad_json():
    with pytest.raises(SchemaError):
        load_model("{not json")


def test_load_model_rejects_non_object():
    with pytest.raises(SchemaError):
        load_model("[1, 2]")


def test_validate_rejects_dangling_child():
    nodes = [make_inner(0, 0, 0.5, 1, 7), make_leaf(1, 0.0)]
    with pytest.raises(StructureError):
        validate_tree(nodes, 1)


def test_validate_rejects_unreachable_node():
    nodes = [
        make_inner(0, 0, 0.5, 1, 2),
        make_leaf(1, 0.0),
        make_leaf(2, 1.0),
        make_leaf(3, 2.0),
    ]
    with pytest.raises(StructureError):
        validate_tree(nodes, 1)


def test_validate_rejects_feature_out_of_range():
    nodes = [make_inner(0, 5, 0.5, 1, 2), make_leaf(1, 0.0), make_leaf(2, 1.0)]
    with pytest.raises(StructureError):
        validate_tree(nodes, 1)


def test_t1_boundary_goes_left(t1):
    # the rule is <=, so a value exactly on the split goes left
    assert logical_infer(t1, [0.5]) == 0.0
    assert logical_infer(t1, [np.nextafter(np.float32(0.5), np.float32(1.0))]) == 1.0


def test_nan_routes_right(t1):
    assert logical_infer(t1, [float("nan")]) == 1.0


def test_comparison_is_binary32(t1):
    # 0.5 + 1e-9 rounds back onto the split in binary32, so it still goes left
    assert logical_infer(t1, [0.5 + 1e-9]) == 0.0


def test_logical_trace(t1):
    assert logical_trace(t1, [0.4]) == [0, 1]
    assert logical_trace(t1, [0.6]) == [0, 2]


def test_depth_and_node_depths(t1, t2, lone_leaf):
    assert depth(t1) == 2
    assert depth(t2) == 3
    assert depth(lone_leaf) == 1
    assert node_depths(t2) == (0, 1, 1, 2, 2, 2, 2)


def test_leaf_sentinel_value():
    assert LEAF_SENTINEL == 0xFFFF


def test_f32_bits_round_trip():
    assert f32_bits(0.5) == 0x3F000000
    assert f32_bits(1.0) == 0x3F800000
    for x in (0.0, -2.5, 3.14, float("inf")):
        assert f32_from_bits(f32_bits(x)) == np.float32(x)
    assert math.isnan(f32_from_bits(0x7FC00000))


def test_leaves(t2):
    assert sorted(n.id for n in leaves(t2)) == [3, 4, 5, 6]


def test_ensemble_average(t1):
    two = Ensemble(trees=(t1, t1), num_features=1)
    assert ensemble_infer(two, [0.6]) == 1.0
    assert ensemble_infer(two, [0.4]) == 0.0


def test_ensemble_majority(t1):
    maj = Ensemble(trees=(t1, t1, t1), num_features=1, aggregation="majority")
    assert ensemble_infer(maj, [0.6]) == 1.0


def test_serialized_doc_shape(t2_ensemble):
    doc = json.loads(serialize(t2_ensemble))
    assert doc["num_features"] == 2
    assert len(doc["trees"]) == 1
    assert len(doc["trees"][0]["nodes"]) == 7


def test_lone_leaf_inference(lone_leaf):
    assert logical_infer(lone_leaf, [123.0]) == np.float32(0.25)
