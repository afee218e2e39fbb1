"""Instruction representation for generated tree functions, plus the
strategy builders that turn a tree and a register plan into code.

The IR is target independent but register aware: virtual registers carry
the transient traversal state, physical registers named by the plan carry
pinned features, cache slots, and packed node payloads. Virtual register
names are fixed:

- int bank: idx (current node index), nfeat, nleft, nright (record
  fields), t (transition scratch)
- float bank: fval (feature value), sval (split value), nsplit (record
  split or leaf prediction), ret (return value)

A program is a flat item list of Label markers and instructions. Every
program starts with one Prologue (which also materializes packed node
payloads into their registers) and reaches Return only through an
Epilogue. Branches name labels; CmpEqBranch falls through on inequality.

Two code families exist. The native family walks the record table in a
loop (SetIndex / LoadNodeRecord / CmpLeBranch / back to the loop head)
and hosts the static_feature and native_node comparison chains; with an
empty plan it is exactly the native baseline. The if-else family encodes
the tree shape as branches (dynamic_feature, ifelse_node; the baseline is
the empty plan again), and the hybrid strategies splice an if-else region
on top of a native loop, entering it through frontier stubs.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import PlanError
from .model import LEAF_SENTINEL, Tree
from .planner import (
    PACK_FULL,
    EnsemblePlan,
    Residency,
    TreePlan,
    plan_ensemble,
)
from .targets import TargetDesc, get_target

INT_VREGS = ("idx", "nfeat", "nleft", "nright", "t")
FLOAT_VREGS = ("fval", "sval", "nsplit", "ret")

FIELD_SPLIT = "split"
FIELD_SLOT_A = "slot_a"
FIELD_SLOT_B = "slot_b"


@dataclass(frozen=True, slots=True)
class Label:
    name: str


@dataclass(frozen=True, slots=True)
class Prologue:
    # Callee-saved registers the function claims, in save order.
    saves: tuple[str, ...] = ()
    # (register, 64 bit word) pairs materialized before any other code.
    payloads: tuple[tuple[str, int], ...] = ()


@dataclass(frozen=True, slots=True)
class Epilogue:
    pass


@dataclass(frozen=True, slots=True)
class LoadFeatureMem:
    """fval or a physical FPR := features[index].

    index is an immediate when known at generation time; indirect loads
    take the index from the nfeat virtual register (native loop fallback).
    scheduled marks loads whose destination register content is promised
    to later code (feature pins and cache slot fills).
    """

    index: int | None  # None means indirect through nfeat
    dst: str = "fval"
    scheduled: bool = False

    @property
    def indirect(self) -> bool:
        return self.index is None


@dataclass(frozen=True, slots=True)
class UseFeatureReg:
    """fval := value of a pinned or slot FPR holding feature `feature`."""

    preg: str
    feature: int
    dst: str = "fval"


@dataclass(frozen=True, slots=True)
class LoadNodeRecord:
    """nsplit, nfeat, nleft, nright := record fields at index idx.
    For a leaf record nsplit carries the prediction and nfeat the sentinel."""


@dataclass(frozen=True, slots=True)
class UseNodeReg:
    """Extract a payload field from a resident node register.
    split goes to a float vreg, slot_a/slot_b to an int vreg."""

    preg: str
    field: str
    dst: str
    node_id: int


@dataclass(frozen=True, slots=True)
class ConstF:
    """dst := binary32 immediate."""

    value: float
    dst: str


@dataclass(frozen=True, slots=True)
class CmpLeBranch:
    """Branch to if_true when a <= b (binary32 ordered: any NaN takes if_false)."""

    a: str
    b: str
    if_true: str
    if_false: str


@dataclass(frozen=True, slots=True)
class CmpEqBranch:
    """Branch to if_true when int vreg a == imm; fall through otherwise."""

    a: str
    imm: int
    if_true: str


@dataclass(frozen=True, slots=True)
class Jmp:
    target: str


@dataclass(frozen=True, slots=True)
class SetIndex:
    """idx := immediate or int vreg."""

    imm: int | None = None
    src: str | None = None


@dataclass(frozen=True, slots=True)
class Return:
    src: str = "ret"


Instr = (
    Prologue
    | Epilogue
    | LoadFeatureMem
    | UseFeatureReg
    | LoadNodeRecord
    | UseNodeReg
    | ConstF
    | CmpLeBranch
    | CmpEqBranch
    | Jmp
    | SetIndex
    | Return
)
Item = Instr | Label


@dataclass(frozen=True, slots=True)
class TreeProgram:
    tree_index: int
    strategy: str  # short strategy code, or "native"/"ifelse" for baselines
    pack: str
    target: str
    items: tuple[Item, ...]
    tree: Tree
    # Node payload residencies (register, packed word already in items'
    # Prologue) kept for encoders and the residency checker.
    residencies: tuple[Residency, ...] = ()
    pinned: tuple[Residency, ...] = ()  # sf feature pins
    slot_regs: tuple[str, ...] = ()  # df cache slots

    @property
    def symbol(self) -> str:
        return f"forest_tree_{self.tree_index}_{self.strategy}"


def _saves(target: TargetDesc, used_regs: set[str]) -> tuple[str, ...]:
    order = target.callee_saved_gpr + target.callee_saved_fpr
    return tuple(r for r in order if r in used_regs)


class _Emitter:
    def __init__(self):
        self.items: list[Item] = []

    def emit(self, item: Item):
        self.items.append(item)

    def label(self, name: str):
        self.items.append(Label(name))


def _leaf_return(em: _Emitter, node, resident: Residency | None):
    if resident is not None:
        em.emit(UseNodeReg(preg=resident.reg, field=FIELD_SPLIT, dst="ret", node_id=node.id))
    else:
        em.emit(ConstF(value=node.prediction, dst="ret"))
    em.emit(Epilogue())
    em.emit(Return("ret"))


def _build_native(
    tree: Tree,
    tree_index: int,
    target: TargetDesc,
    pack: str,
    pins: tuple[Residency, ...],
    chain: tuple[Residency, ...],
    strategy: str,
) -> TreeProgram:
    """Record-table loop. Resident nodes are served by a comparison chain on
    idx before the record load; pinned features by a chain on nfeat after
    the leaf check."""
    em = _Emitter()
    used = {r.reg for r in pins} | {r.reg for r in chain}
    saves = _saves(target, used)
    payloads = tuple((r.reg, r.payload) for r in chain)
    em.emit(Prologue(saves=saves, payloads=payloads))
    for pin in pins:
        em.emit(LoadFeatureMem(index=pin.feature_index, dst=pin.reg, scheduled=True))
    em.emit(SetIndex(imm=0))
    em.label("loop")
    for r in chain:
        em.emit(CmpEqBranch(a="idx", imm=r.node_id, if_true=f"n{r.node_id}"))
    em.emit(LoadNodeRecord())
    em.emit(CmpEqBranch(a="nfeat", imm=LEAF_SENTINEL, if_true="leaf"))
    for pin in pins:
        em.emit(CmpEqBranch(a="nfeat", imm=pin.feature_index, if_true=f"pin{pin.feature_index}"))
    em.emit(LoadFeatureMem(index=None))
    em.label("cmp")
    em.emit(CmpLeBranch(a="fval", b="nsplit", if_true="go_left", if_false="go_right"))
    em.label("go_left")
    em.emit(SetIndex(src="nleft"))
    em.emit(Jmp("loop"))
    em.label("go_right")
    em.emit(SetIndex(src="nright"))
    em.emit(Jmp("loop"))
    for pin in pins:
        em.label(f"pin{pin.feature_index}")
        em.emit(UseFeatureReg(preg=pin.reg, feature=pin.feature_index))
        em.emit(Jmp("cmp"))
    for r in chain:
        node = tree.nodes[r.node_id]
        em.label(f"n{node.id}")
        if node.is_leaf:
            _leaf_return(em, node, r)
            continue
        em.emit(UseNodeReg(preg=r.reg, field=FIELD_SPLIT, dst="nsplit", node_id=node.id))
        em.emit(LoadFeatureMem(index=node.feature_index))
        em.emit(CmpLeBranch(a="fval", b="nsplit", if_true=f"n{node.id}_l", if_false=f"n{node.id}_r"))
        em.label(f"n{node.id}_l")
        if pack == PACK_FULL:
            em.emit(UseNodeReg(preg=r.reg, field=FIELD_SLOT_A, dst="t", node_id=node.id))
            em.emit(SetIndex(src="t"))
        else:
            em.emit(SetIndex(imm=node.left_child))
        em.emit(Jmp("loop"))
        em.label(f"n{node.id}_r")
        if pack == PACK_FULL:
            em.emit(UseNodeReg(preg=r.reg, field=FIELD_SLOT_B, dst="t", node_id=node.id))
            em.emit(SetIndex(src="t"))
        else:
            em.emit(SetIndex(imm=node.right_child))
        em.emit(Jmp("loop"))
    em.label("leaf")
    em.emit(Epilogue())
    em.emit(Return("nsplit"))
    return TreeProgram(
        tree_index=tree_index,
        strategy=strategy,
        pack=pack if chain else "none",
        target=target.name,
        items=tuple(em.items),
        tree=tree,
        residencies=chain,
        pinned=pins,
    )


def _build_ifelse(
    tree: Tree,
    tree_index: int,
    target: TargetDesc,
    pack: str,
    schedule: dict[int, tuple[str, int]],
    slot_regs: tuple[str, ...],
    residents: dict[int, Residency],
    strategy: str,
) -> TreeProgram:
    """Whole tree as branches, blocks in preorder. Feature reads go through
    the slot schedule when one exists; split values come from a register
    for resident nodes and immediates otherwise."""
    em = _Emitter()
    used = {slot_regs[s] for _, s in schedule.values()}
    used |= {r.reg for r in residents.values()}
    res_tuple = tuple(residents.values())  # selection order (dict insertion order)
    em.emit(
        Prologue(
            saves=_saves(target, used),
            payloads=tuple((r.reg, r.payload) for r in res_tuple),
        )
    )

    def walk(node_id: int):
        node = tree.nodes[node_id]
        em.label(f"n{node_id}")
        if node.is_leaf:
            _leaf_return(em, node, residents.get(node_id))
            return
        sched = schedule.get(node_id)
        if sched is None:
            em.emit(LoadFeatureMem(index=node.feature_index))
        else:
            action, slot = sched
            if action == "load":
                em.emit(
                    LoadFeatureMem(index=node.feature_index, dst=slot_regs[slot], scheduled=True)
                )
            em.emit(UseFeatureReg(preg=slot_regs[slot], feature=node.feature_index))
        r = residents.get(node_id)
        if r is not None:
            em.emit(UseNodeReg(preg=r.reg, field=FIELD_SPLIT, dst="sval", node_id=node_id))
        else:
            em.emit(ConstF(value=node.split_value, dst="sval"))
        em.emit(
            CmpLeBranch(
                a="fval", b="sval", if_true=f"n{node.left_child}", if_false=f"n{node.right_child}"
            )
        )
        walk(node.left_child)
        walk(node.right_child)

    walk(0)
    return TreeProgram(
        tree_index=tree_index,
        strategy=strategy,
        pack=pack if residents else "none",
        target=target.name,
        items=tuple(em.items),
        tree=tree,
        residencies=res_tuple,
        slot_regs=slot_regs,
    )


def _build_hybrid(
    tree: Tree,
    tree_index: int,
    target: TargetDesc,
    pack: str,
    region: frozenset[int],
    residents: dict[int, Residency],
    strategy: str,
) -> TreeProgram:
    """If-else region over the hottest nodes, native loop for the rest.
    Region exits jump to frontier stubs that set idx (from the parent's
    packed slot under full-node packing) and enter the loop."""
    if not region:
        return _build_native(tree, tree_index, target, pack, (), (), strategy)
    em = _Emitter()
    res_tuple = tuple(residents.values())
    em.emit(
        Prologue(
            saves=_saves(target, {r.reg for r in res_tuple}),
            payloads=tuple((r.reg, r.payload) for r in res_tuple),
        )
    )
    frontier: list[tuple[int, int, str]] = []  # (child, parent, slot field)

    def child_label(parent, child_id: int, slot_field: str) -> str:
        if child_id in region:
            return f"n{child_id}"
        frontier.append((child_id, parent.id, slot_field))
        return f"stub{child_id}"

    def walk(node_id: int):
        node = tree.nodes[node_id]
        em.label(f"n{node_id}")
        if node.is_leaf:
            _leaf_return(em, node, residents[node_id])
            return
        r = residents[node_id]
        em.emit(LoadFeatureMem(index=node.feature_index))
        em.emit(UseNodeReg(preg=r.reg, field=FIELD_SPLIT, dst="sval", node_id=node_id))
        # With one native child its index sits in slot b; with two, left
        # in slot a and right in slot b (see pack_payload).
        left_in = node.left_child in region
        right_in = node.right_child in region
        left_slot = FIELD_SLOT_B if right_in else FIELD_SLOT_A
        em.emit(
            CmpLeBranch(
                a="fval",
                b="sval",
                if_true=child_label(node, node.left_child, left_slot),
                if_false=child_label(node, node.right_child, FIELD_SLOT_B),
            )
        )
        if left_in:
            walk(node.left_child)
        if right_in:
            walk(node.right_child)

    walk(0)
    for child_id, parent_id, slot_field in frontier:
        em.label(f"stub{child_id}")
        if pack == PACK_FULL:
            em.emit(
                UseNodeReg(preg=residents[parent_id].reg, field=slot_field, dst="t", node_id=parent_id)
            )
            em.emit(SetIndex(src="t"))
        else:
            em.emit(SetIndex(imm=child_id))
        em.emit(Jmp("loop"))
    if frontier:
        em.label("loop")
        em.emit(LoadNodeRecord())
        em.emit(CmpEqBranch(a="nfeat", imm=LEAF_SENTINEL, if_true="leaf"))
        em.emit(LoadFeatureMem(index=None))
        em.emit(CmpLeBranch(a="fval", b="nsplit", if_true="go_left", if_false="go_right"))
        em.label("go_left")
        em.emit(SetIndex(src="nleft"))
        em.emit(Jmp("loop"))
        em.label("go_right")
        em.emit(SetIndex(src="nright"))
        em.emit(Jmp("loop"))
        em.label("leaf")
        em.emit(Epilogue())
        em.emit(Return("nsplit"))
    return TreeProgram(
        tree_index=tree_index,
        strategy=strategy,
        pack=pack,
        target=target.name,
        items=tuple(em.items),
        tree=tree,
        residencies=res_tuple,
    )


def build_tree_program(plan: EnsemblePlan, tree: Tree, tp: TreePlan) -> TreeProgram:
    target = get_target(plan.target)
    code = plan.strategy
    if code == "sf":
        return _build_native(tree, tp.tree_index, target, "none", plan.pinned, (), "sf")
    if code == "nn":
        return _build_native(tree, tp.tree_index, target, plan.pack, (), tp.residencies, "nn")
    if code == "df":
        return _build_ifelse(
            tree, tp.tree_index, target, "none", tp.fifo, plan.slot_regs, {}, "df"
        )
    if code == "in":
        residents = {r.node_id: r for r in tp.residencies}
        return _build_ifelse(tree, tp.tree_index, target, plan.pack, {}, (), residents, "in")
    if code in ("hn", "hl"):
        residents = {r.node_id: r for r in tp.residencies}
        return _build_hybrid(
            tree, tp.tree_index, target, plan.pack, tp.ifelse_set, residents, code
        )
    raise PlanError(f"no builder for strategy {code!r}")


def build_programs(plan: EnsemblePlan, ensemble) -> list[TreeProgram]:
    return [
        build_tree_program(plan, ensemble.trees[tp.tree_index], tp)
        for tp in plan.tree_plans
    ]


def build_native_baseline(ensemble, target: TargetDesc | str) -> list[TreeProgram]:
    """The native family with an empty plan, under its own symbol suffix."""
    desc = get_target(target) if isinstance(target, str) else target
    return [
        _build_native(tree, i, desc, "none", (), (), "native")
        for i, tree in enumerate(ensemble.trees)
    ]


def build_ifelse_baseline(ensemble, target: TargetDesc | str) -> list[TreeProgram]:
    """The if-else family with an empty plan, under its own symbol suffix."""
    desc = get_target(target) if isinstance(target, str) else target
    return [
        _build_ifelse(tree, i, desc, "none", {}, (), {}, "ifelse")
        for i, tree in enumerate(ensemble.trees)
    ]


def build_ensemble_programs(
    ensemble,
    strategy: str,
    k: int,
    target: TargetDesc | str = "abstract",
    pack: str = PACK_FULL,
    include_leaves: bool = True,
) -> tuple[EnsemblePlan, list[TreeProgram]]:
    plan = plan_ensemble(ensemble, strategy, k, target, pack, include_leaves)
    return plan, build_programs(plan, ensemble)


def validate_program(program: TreeProgram) -> list[str]:
    """Static shape checks; returns violations (empty list = well formed)."""
    bad: list[str] = []
    items = program.items
    if not items or not isinstance(items[0], Prologue):
        bad.append("program does not start with a prologue")
    labels = [it.name for it in items if isinstance(it, Label)]
    if len(set(labels)) != len(labels):
        bad.append("duplicate label")
    defined = set(labels)
    for it in items:
        if isinstance(it, Prologue) and it is not items[0]:
            bad.append("prologue not first")
        targets = []
        if isinstance(it, CmpLeBranch):
            targets = [it.if_true, it.if_false]
        elif isinstance(it, CmpEqBranch):
            targets = [it.if_true]
        elif isinstance(it, Jmp):
            targets = [it.target]
        for t in targets:
            if t not in defined:
                bad.append(f"jump to undefined label {t!r}")
    for i, it in enumerate(items):
        if isinstance(it, Return):
            if i == 0 or not isinstance(items[i - 1], Epilogue):
                bad.append("return not preceded by epilogue")
        if isinstance(it, UseNodeReg):
            want_float = it.field == FIELD_SPLIT
            if want_float and it.dst not in FLOAT_VREGS:
                bad.append(f"split extract into int vreg {it.dst!r}")
            if not want_float and it.dst not in INT_VREGS:
                bad.append(f"slot extract into float vreg {it.dst!r}")
    if not any(isinstance(it, Return) for it in items):
        bad.append("no return")
    return bad
