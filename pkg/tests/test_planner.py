import pytest

from regforest.errors import PackError, PlanError
from regforest.model import (
    Ensemble,
    f32_bits,
    make_inner,
    make_leaf,
    node_depths,
    validate_tree,
)
from regforest.planner import (
    PACK_FULL,
    PACK_SPLIT,
    check_plan,
    fifo_schedule,
    normalize_strategy,
    pack_node,
    pack_payload,
    plan_document,
    plan_ensemble,
    select_features,
    select_layers,
    select_nodes,
    unpack_slot_a,
    unpack_slot_b,
    unpack_split,
)
from regforest.profiler import annotate
from regforest.randtrees import random_tree
from regforest.targets import get_target


def chain_tree():
    # root f2 -> child f0 -> grandchild f2, then a leaf; exercises the
    # feature cache with a repeated feature separated by a different one
    nodes = [
        make_inner(0, 2, 0.5, 1, 2, left_count=50, right_count=50),
        make_inner(1, 0, 0.5, 3, 4, left_count=25, right_count=25),
        make_leaf(2, 9.0),
        make_inner(3, 2, 0.25, 5, 6, left_count=10, right_count=15),
        make_leaf(4, 8.0),
        make_leaf(5, 1.0),
        make_leaf(6, 2.0),
    ]
    return validate_tree(nodes, 3)


def test_normalize_strategy():
    assert normalize_strategy("hn") == "hn"
    assert normalize_strategy("hybrid_node") == "hn"
    assert normalize_strategy("static_feature") == "sf"
    with pytest.raises(PlanError):
        normalize_strategy("turbo")


def test_pack_node_frozen_example():
    # 0.5 is 0x3F000000 as binary32; slots sit in the low halves
    assert pack_node(f32_bits(0.5), 7, 9) == 0x3F00000000070009


def test_pack_node_range_errors():
    with pytest.raises(PackError):
        pack_node(1 << 32, 0, 0)
    with pytest.raises(PackError):
        pack_node(0, 1 << 16, 0)
    with pytest.raises(PackError):
        pack_node(0, 0, -1)


def test_unpack_round_trip():
    word = pack_node(f32_bits(2.75), 123, 456)
    assert unpack_split(word) == 2.75
    assert unpack_slot_a(word) == 123
    assert unpack_slot_b(word) == 456


def test_pack_payload_roles(t2):
    # native resident: children in the slots
    word = pack_payload(t2, 0, PACK_FULL, frozenset())
    assert unpack_split(word) == 0.5
    assert unpack_slot_a(word) == 1
    assert unpack_slot_b(word) == 2
    # if-else resident with both children inside: feature in slot a, slots dead
    word = pack_payload(t2, 0, PACK_FULL, frozenset({0, 1, 2}))
    assert unpack_slot_a(word) == 0
    assert unpack_slot_b(word) == 0
    # one child outside: slot b names the frontier node
    word = pack_payload(t2, 0, PACK_FULL, frozenset({0, 1}))
    assert unpack_slot_b(word) == 2
    # leaf carries its prediction in the split field
    word = pack_payload(t2, 3, PACK_FULL, frozenset())
    assert unpack_split(word) == 1.0
    assert unpack_slot_a(word) == 0
    # split-only is the bare 32 bit pattern
    assert pack_payload(t2, 0, PACK_SPLIT, frozenset()) == f32_bits(0.5)


def test_select_nodes_top_k(t2):
    ann = annotate(t2)
    # absprobs: 1.0, .5, .5, .25, .25, .3, .2; ties resolve shallower, then id
    assert select_nodes(t2, 3, ann) == [0, 1, 2]
    assert select_nodes(t2, 4, ann) == [0, 1, 2, 5]
    assert select_nodes(t2, 7, ann) == [0, 1, 2, 5, 3, 4, 6]


def test_select_nodes_prefix_is_ancestor_closed(rng):
    for _ in range(30):
        tree = random_tree(rng, max_depth=8, num_features=4)
        order = select_nodes(tree, len(tree.nodes))
        seen = set()
        for nid in order:
            parent = tree.parents[nid]
            assert parent == -1 or parent in seen
            seen.add(nid)


def test_select_nodes_without_leaves(t2):
    chosen = select_nodes(t2, 7, include_leaves=False)
    assert chosen == [0, 1, 2]
    assert all(not t2.nodes[i].is_leaf for i in chosen)


def test_select_features_caps_at_positive_scores(t1, t2):
    ens = Ensemble(trees=(t1, t2), num_features=4)
    # features 2 and 3 are never read, so they never earn a register
    assert select_features(ens, 4) == [0, 1]
    assert select_features(ens, 1) == [0]


def test_select_layers(t2):
    assert select_layers(t2, 0) == 0
    assert select_layers(t2, 1) == 1
    assert select_layers(t2, 2) == 1
    assert select_layers(t2, 3) == 2
    assert select_layers(t2, 6) == 2
    assert select_layers(t2, 7) == 3
    assert select_layers(t2, 100) == 3


def test_fifo_schedule_hits_and_loads():
    tree = chain_tree()
    sched = fifo_schedule(tree, 2)
    # f2 loads slot 0, f0 loads slot 1, the repeated f2 hits slot 0
    assert sched[0] == ("load", 0)
    assert sched[1] == ("load", 1)
    assert sched[3] == ("hit", 0)


def test_fifo_schedule_evicts_oldest():
    tree = chain_tree()
    sched = fifo_schedule(tree, 1)
    # one slot: every feature change evicts, so the repeat misses too
    assert sched == {0: ("load", 0), 1: ("load", 0), 3: ("load", 0)}


def test_fifo_schedule_zero_slots(t2):
    assert fifo_schedule(t2, 0) == {}


def test_fifo_state_is_path_determined(rng):
    # siblings start from the same cache; replay each root path to confirm
    for _ in range(10):
        tree = random_tree(rng, max_depth=7, num_features=3)
        sched = fifo_schedule(tree, 2)
        for node in tree.nodes:
            if node.is_leaf:
                continue
            path = []
            cur = node.id
            while cur != -1:
                path.append(cur)
                cur = tree.parents[cur]
            path.reverse()
            cache: list[tuple[int, int]] = []
            for nid in path[:-1]:
                fi = tree.nodes[nid].feature_index
                if all(f != fi for f, _ in cache):
                    if len(cache) < 2:
                        cache.append((fi, len(cache)))
                    else:
                        slot = cache[0][1]
                        cache = cache[1:] + [(fi, slot)]
            fi = tree.nodes[node.id].feature_index
            hit = next((s for f, s in cache if f == fi), None)
            action, slot = sched[node.id]
            if hit is not None:
                assert (action, slot) == ("hit", hit)
            else:
                assert action == "load"


def test_plan_budget_clamps(t2_ensemble):
    target = get_target("x86_64")
    plan = plan_ensemble(t2_ensemble, "nn", 100, target)
    assert plan.requested_registers == 100
    assert plan.effective_registers == target.budget == 20
    assert len(plan.tree_plans[0].residencies) == 7  # whole tree fits


def test_plan_negative_registers(t2_ensemble):
    with pytest.raises(PlanError):
        plan_ensemble(t2_ensemble, "nn", -1, get_target("abstract"))


def test_plan_k_zero_is_empty(t2_ensemble):
    for strategy in ("sf", "df", "nn", "hn", "hl", "in"):
        plan = plan_ensemble(t2_ensemble, strategy, 0, get_target("abstract"))
        assert plan.effective_registers == 0
        for tp in plan.tree_plans:
            assert tp.residencies == ()


def test_plan_nn_payload_registers(t2_ensemble):
    target = get_target("abstract")
    plan = plan_ensemble(t2_ensemble, "nn", 3, target)
    tp = plan.tree_plans[0]
    assert [r.reg for r in tp.residencies] == ["g0", "g1", "g2"]
    assert tp.resident_node_ids() == (0, 1, 2)
    assert tp.residencies[0].payload == pack_node(f32_bits(0.5), 1, 2)
    assert tp.ifelse_set == frozenset()


def test_plan_overflows_gprs_into_fprs(t2_ensemble):
    target = get_target("abstract")
    plan = plan_ensemble(t2_ensemble, "nn", 10, target)
    regs = [r.reg for r in plan.tree_plans[0].residencies]
    assert regs == ["g0", "g1", "g2", "g3", "g4", "g5", "g6"]
    banks = {r.reg: r.bank for r in plan.tree_plans[0].residencies}
    assert all(b == "gpr" for b in banks.values())
    # force the spill into FPRs with a wider tree
    rngtree = random_tree(__import__("numpy").random.default_rng(7), max_depth=9, num_features=3)
    ens = Ensemble(trees=(rngtree,), num_features=3)
    plan = plan_ensemble(ens, "nn", 12, target)
    banks = [r.bank for r in plan.tree_plans[0].residencies]
    if len(banks) > 8:
        assert banks[:8] == ["gpr"] * 8
        assert set(banks[8:]) == {"fpr"}


def test_plan_hn_region_matches_residents(t2_ensemble):
    plan = plan_ensemble(t2_ensemble, "hn", 3, get_target("abstract"))
    tp = plan.tree_plans[0]
    assert tp.ifelse_set == frozenset({0, 1, 2})
    # root has both children in the region, so its slots are dead code space
    r0 = next(r for r in tp.residencies if r.node_id == 0)
    assert unpack_slot_a(r0.payload) == 0
    assert unpack_slot_b(r0.payload) == 0
    # node 1's children fall outside the region entirely, which makes its
    # payload native shape again: the frontier loop needs both child ids
    r1 = next(r for r in tp.residencies if r.node_id == 1)
    assert unpack_slot_a(r1.payload) == 3
    assert unpack_slot_b(r1.payload) == 4


def test_plan_hl_layers(t2_ensemble):
    plan = plan_ensemble(t2_ensemble, "hl", 5, get_target("abstract"))
    tp = plan.tree_plans[0]
    assert tp.layers == 2
    assert tp.ifelse_set == frozenset({0, 1, 2})
    assert len(tp.residencies) == 3


def test_plan_in_covers_whole_tree(t2_ensemble):
    plan = plan_ensemble(t2_ensemble, "in", 2, get_target("abstract"))
    tp = plan.tree_plans[0]
    assert tp.ifelse_set == frozenset(range(7))
    assert len(tp.residencies) == 2


def test_plan_sf_pins(t1, t2):
    ens = Ensemble(trees=(t1, t2), num_features=2)
    plan = plan_ensemble(ens, "sf", 5, get_target("abstract"))
    assert [r.feature_index for r in plan.pinned] == [0, 1]
    assert [r.reg for r in plan.pinned] == ["f0", "f1"]
    assert all(tp.residencies == plan.pinned for tp in plan.tree_plans)


def test_plan_df_slots(t2_ensemble):
    plan = plan_ensemble(t2_ensemble, "df", 2, get_target("abstract"))
    assert plan.slot_regs == ("f0", "f1")
    tp = plan.tree_plans[0]
    assert tp.fifo == fifo_schedule(t2_ensemble.trees[0], 2)


def test_check_plan_clean(t2_ensemble, rng):
    target = get_target("x86_64")
    trees = tuple(random_tree(rng, max_depth=6, num_features=4) for _ in range(4))
    ens = Ensemble(trees=trees, num_features=4)
    for strategy in ("sf", "df", "nn", "hn", "hl", "in"):
        for k in (0, 3, 10):
            plan = plan_ensemble(ens, strategy, k, target)
            assert check_plan(plan, ens, target) == []


def test_check_plan_flags_corruption(t2_ensemble):
    import dataclasses

    target = get_target("abstract")
    plan = plan_ensemble(t2_ensemble, "nn", 3, target)
    bad_res = dataclasses.replace(plan.tree_plans[0].residencies[0], payload=0)
    bad_tp = dataclasses.replace(
        plan.tree_plans[0],
        residencies=(bad_res,) + plan.tree_plans[0].residencies[1:],
    )
    bad_plan = dataclasses.replace(plan, tree_plans=(bad_tp,))
    problems = check_plan(bad_plan, t2_ensemble, target)
    assert any("payload" in p for p in problems)


def test_plan_document_shape(t2_ensemble):
    doc = plan_document(plan_ensemble(t2_ensemble, "hl", 3, get_target("abstract")))
    assert doc["strategy"] == "hl"
    assert doc["strategy_name"] == "hybrid_layer"
    assert doc["effective_registers"] == 3
    tree_doc = doc["trees"][0]
    assert tree_doc["layers"] == 2
    assert tree_doc["ifelse_set"] == [0, 1, 2]
    assert tree_doc["residencies"][0]["payload"].startswith("0x")


def test_node_depths_fixture(t2):
    assert node_depths(t2) == (0, 1, 1, 2, 2, 2, 2)
