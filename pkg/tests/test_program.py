import numpy as np
import pytest

from regforest.errors import LoweringError
from regforest.ir import (
    Prologue,
    Return,
    UseNodeReg,
    build_ensemble_programs,
    build_native_baseline,
)
from regforest.model import LEAF_SENTINEL, Ensemble
from regforest.planner import PACK_SPLIT
from regforest.program import (
    CODE_WIDTH,
    OP_CMP_EQ,
    OP_CMP_LE,
    OP_JMP,
    OP_PROLOGUE,
    OP_RETURN,
    OP_USE_NODE_SLOT,
    OP_USE_NODE_SPLIT,
    default_step_limit,
    disassemble,
    encode,
    node_table_arrays,
)
from regforest.randtrees import random_tree


def test_encode_shape(t2_ensemble):
    prog = build_native_baseline(t2_ensemble, "abstract")[0]
    enc = encode(prog)
    assert enc.code.ndim == 2
    assert enc.code.shape[1] == CODE_WIDTH
    assert enc.code.dtype == np.int32
    assert enc.code[0, 0] == OP_PROLOGUE
    assert enc.symbol == "forest_tree_0_native"


def test_node_table_arrays(t2):
    split, feat, left, right = node_table_arrays(t2)
    assert split.dtype == np.float32
    assert feat.tolist() == [0, 0, 1, LEAF_SENTINEL, LEAF_SENTINEL, LEAF_SENTINEL, LEAF_SENTINEL]
    assert left.tolist()[:3] == [1, 3, 5]
    assert right.tolist()[:3] == [2, 4, 6]
    # leaves carry predictions in the split column
    assert split.tolist()[3:] == [1.0, 2.0, 3.0, 4.0]


def test_branch_targets_resolve(t2_ensemble):
    _, programs = build_ensemble_programs(t2_ensemble, "in", 0)
    enc = encode(programs[0])
    n = len(enc.code)
    for r in enc.code:
        op = int(r[0])
        if op == OP_CMP_LE:
            assert 0 <= int(r[2]) < n and 0 <= int(r[3]) < n
        elif op == OP_CMP_EQ:
            assert 0 <= int(r[2]) < n
        elif op == OP_JMP:
            assert 0 <= int(r[1]) < n


def test_float_bank_growth(t2_ensemble):
    _, programs = build_ensemble_programs(t2_ensemble, "sf", 2, target="abstract")
    enc = encode(programs[0])
    # fixed four entries, then one per pinned FPR in first-use order
    assert enc.float_bank[:4] == ("fval", "sval", "nsplit", "ret")
    assert set(enc.float_bank[4:]) == {r.reg for r in programs[0].pinned}


def test_resident_split_goes_to_const_pool(t2_ensemble):
    _, programs = build_ensemble_programs(t2_ensemble, "in", 7, target="abstract")
    enc = encode(programs[0])
    ops = enc.code[:, 0].tolist()
    assert OP_USE_NODE_SPLIT in ops
    # all 7 nodes resident: their split/prediction values land in the pool
    splits = {float(np.float32(v)) for v in enc.fconst}
    assert {0.5, 0.25, 0.75, 1.0, 2.0, 3.0, 4.0} <= splits


def test_slot_reads_encode_immediates(t2_ensemble):
    _, programs = build_ensemble_programs(t2_ensemble, "nn", 3, target="abstract")
    enc = encode(programs[0])
    slot_rows = [r for r in enc.code if int(r[0]) == OP_USE_NODE_SLOT]
    assert slot_rows, "nn residents must produce slot reads"
    # slot values are child indices of the resident nodes
    for r in slot_rows:
        assert 0 <= int(r[1]) < 7


def test_min_features(t2_ensemble):
    _, programs = build_ensemble_programs(t2_ensemble, "in", 0)
    enc = encode(programs[0])
    assert enc.min_features == 2


def test_split_only_builders_avoid_slot_reads(t2_ensemble):
    # under split-only packing every builder replaces slot reads with index
    # immediates, so encoding stays legal
    for strategy in ("nn", "hn", "hl", "in"):
        _, programs = build_ensemble_programs(
            t2_ensemble, strategy, 3, target="abstract", pack=PACK_SPLIT
        )
        enc = encode(programs[0])
        assert OP_USE_NODE_SLOT not in enc.code[:, 0].tolist()


def test_split_only_slot_read_raises(t2_ensemble):
    import dataclasses

    # the encoder still refuses a slot read against a split-only payload,
    # which only a malformed program can request
    _, programs = build_ensemble_programs(t2_ensemble, "nn", 3, target="abstract")
    broken = dataclasses.replace(programs[0], pack=PACK_SPLIT)
    with pytest.raises(LoweringError, match="split-only"):
        encode(broken)


def test_unknown_preg_raises(t2_ensemble):
    import dataclasses

    _, programs = build_ensemble_programs(t2_ensemble, "nn", 2, target="abstract")
    prog = programs[0]
    # drop the residencies so the UseNodeReg items dangle
    broken = dataclasses.replace(prog, residencies=())
    assert any(isinstance(it, UseNodeReg) for it in broken.items)
    with pytest.raises(LoweringError, match="not a resident"):
        encode(broken)


def test_default_step_limit_scales(rng):
    small = Ensemble(trees=(random_tree(rng, max_depth=2, num_features=2),), num_features=2)
    deep = Ensemble(trees=(random_tree(rng, max_depth=12, num_features=2),), num_features=2)
    enc_small = encode(build_native_baseline(small, "abstract")[0])
    enc_deep = encode(build_native_baseline(deep, "abstract")[0])
    assert default_step_limit(enc_deep) > default_step_limit(enc_small)


def test_disassemble_mentions_each_row(t2_ensemble):
    enc = encode(build_native_baseline(t2_ensemble, "abstract")[0])
    text = disassemble(enc)
    lines = text.splitlines()
    assert len(lines) == len(enc.code)
    assert "OP_PROLOGUE" in lines[0]
    assert any("OP_RETURN" in ln for ln in lines)


def test_return_op_present(t2_ensemble):
    for strategy in ("sf", "df", "nn", "hn", "hl", "in"):
        _, programs = build_ensemble_programs(t2_ensemble, strategy, 2, target="abstract")
        enc = encode(programs[0])
        assert OP_RETURN in enc.code[:, 0].tolist()
