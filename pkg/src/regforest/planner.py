"""Register allocation planning for the six codegen strategies.

A plan decides, before any code is generated, which values live in which
physical registers and what the generated code may assume about them:

- static_feature (sf): the ensemble's highest-suitability features are
  pinned in FPRs for the whole traversal of every tree.
- dynamic_feature (df): a fixed set of FPR slots acts as a feature cache
  managed at generation time; each node of the if-else code is scheduled
  as a cache hit or a load that replaces the oldest entry.
- native_node (nn): whole node records of the highest-absprob nodes are
  packed into registers; a comparison chain in the native loop serves them
  without touching the node table.
- hybrid_node (hn): the same node selection, but the selected nodes become
  if-else code that reads split values (and exit indices) from registers,
  falling back to the native loop at the frontier.
- hybrid_layer (hl): as hn, but the if-else region is the largest stack of
  complete tree layers whose node count fits the budget.
- ifelse_node (in): the whole tree is if-else code; the selected nodes keep
  their split values in registers instead of instruction immediates.

Node selection orders by descending absolute access probability, breaking
ties toward the shallower node and then the smaller id; the resulting
prefix is ancestor closed, which hn and hl rely on. Leaves are selectable
too, carrying their prediction in the split field of the payload.

Packed payloads are 64 bit words: split value bits in [63:32], slot a in
[31:16], slot b in [15:0]. Slot meaning depends on the node's role; see
pack_payload. Payload words fill usable GPRs first, then FPRs, so the
full budget of a target is available to node strategies. Feature values
live in FPRs only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import PackError, PlanError
from .model import Ensemble, Tree, f32_bits, f32_from_bits, node_depths
from .profiler import ProbAnnotation, annotate, ensemble_suitability
from .targets import TargetDesc, get_target

PACK_FULL = "full-node"
PACK_SPLIT = "split-only"

# Short strategy codes, as the CLI spells them; long names accepted as input.
STRATEGY_NAMES = {
    "sf": "static_feature",
    "df": "dynamic_feature",
    "nn": "native_node",
    "hn": "hybrid_node",
    "hl": "hybrid_layer",
    "in": "ifelse_node",
}
_LONG_TO_SHORT = {v: k for k, v in STRATEGY_NAMES.items()}

NODE_STRATEGIES = ("nn", "hn", "hl", "in")
FEATURE_STRATEGIES = ("sf", "df")

SPLIT_SHIFT = 32
SLOT_A_SHIFT = 16
SLOT_MASK = 0xFFFF


def normalize_strategy(name: str) -> str:
    if name in STRATEGY_NAMES:
        return name
    if name in _LONG_TO_SHORT:
        return _LONG_TO_SHORT[name]
    raise PlanError(f"unknown strategy {name!r}")


def pack_node(split_bits: int, slot_a: int, slot_b: int) -> int:
    """64 bit payload word: split bits in [63:32], slot_a [31:16], slot_b [15:0]."""
    if not 0 <= split_bits <= 0xFFFFFFFF:
        raise PackError(f"split bits out of range: {split_bits:#x}")
    if not 0 <= slot_a <= SLOT_MASK:
        raise PackError(f"slot_a out of range: {slot_a}")
    if not 0 <= slot_b <= SLOT_MASK:
        raise PackError(f"slot_b out of range: {slot_b}")
    return (split_bits << SPLIT_SHIFT) | (slot_a << SLOT_A_SHIFT) | slot_b


def unpack_split(word: int) -> float:
    return f32_from_bits((word >> SPLIT_SHIFT) & 0xFFFFFFFF)


def unpack_slot_a(word: int) -> int:
    return (word >> SLOT_A_SHIFT) & SLOT_MASK


def unpack_slot_b(word: int) -> int:
    return word & SLOT_MASK


def pack_payload(tree: Tree, node_id: int, pack: str, ifelse_set: frozenset[int]) -> int:
    """Payload word for a resident node under the given pack mode.

    split-only: the 32 bit split pattern alone (a leaf's prediction pattern).

    full-node slot semantics by role:
    - leaf: (prediction bits, 0, 0); only the split field is ever read.
    - native resident (chain block, or both children outside the if-else
      region): (split, left, right); the chain reads both slots.
    - if-else resident with both children in the region: (split, feature, 0);
      transitions are code structure, the slots are dead.
    - if-else resident with one child outside the region: (split, feature,
      outside child id); the frontier stub reads slot b.
    """
    node = tree.nodes[node_id]
    value_bits = f32_bits(node.prediction if node.is_leaf else node.split_value)
    if pack == PACK_SPLIT:
        return value_bits
    if pack != PACK_FULL:
        raise PackError(f"unknown pack mode {pack!r}")
    if node.is_leaf:
        return pack_node(value_bits, 0, 0)
    if node_id in ifelse_set:
        left_in = node.left_child in ifelse_set
        right_in = node.right_child in ifelse_set
        if left_in and right_in:
            return pack_node(value_bits, node.feature_index, 0)
        if left_in:
            return pack_node(value_bits, node.feature_index, node.right_child)
        if right_in:
            return pack_node(value_bits, node.feature_index, node.left_child)
    return pack_node(value_bits, node.left_child, node.right_child)


@dataclass(frozen=True, slots=True)
class Residency:
    """One physical register claimed for the whole tree function."""

    reg: str
    bank: str  # "gpr" | "fpr"
    kind: str  # "node" | "feature"
    node_id: int | None = None
    feature_index: int | None = None
    payload: int | None = None  # 64 bit materialization word, node kind only


@dataclass(frozen=True, slots=True)
class TreePlan:
    tree_index: int
    residencies: tuple[Residency, ...]
    # Node ids emitted as if-else blocks: the selection for hn, the layer
    # region for hl, every node for in/df, empty for nn/sf.
    ifelse_set: frozenset[int] = frozenset()
    layers: int = 0  # hl: number of complete layers in the if-else region
    # df: node id -> ("hit" | "load", slot index), in generation order
    fifo: dict[int, tuple[str, int]] = field(default_factory=dict)

    def resident_node_ids(self) -> tuple[int, ...]:
        return tuple(r.node_id for r in self.residencies if r.kind == "node")


@dataclass(frozen=True, slots=True)
class EnsemblePlan:
    strategy: str  # short code
    target: str
    requested_registers: int
    effective_registers: int
    pack: str  # "full-node" | "split-only" | "none"
    include_leaves: bool
    tree_plans: tuple[TreePlan, ...]
    pinned: tuple[Residency, ...] = ()  # sf: ensemble-wide feature pins
    slot_regs: tuple[str, ...] = ()  # df: cache slot registers


def node_register_pool(target: TargetDesc) -> list[tuple[str, str]]:
    """(reg, bank) hand-out order for packed node payloads: GPRs, then FPRs."""
    return [(r, "gpr") for r in target.usable_gpr] + [(r, "fpr") for r in target.usable_fpr]


def select_features(ensemble: Ensemble, k: int) -> list[int]:
    """Top-k feature indices by ensemble suitability, ties toward smaller index.
    Features the ensemble never reads score 0 and are not worth a register."""
    scores = ensemble_suitability(ensemble)
    ranked = [i for i in scores.ranked() if scores.of(i) > 0.0]
    return ranked[:k]


def select_nodes(
    tree: Tree, k: int, ann: ProbAnnotation | None = None, include_leaves: bool = True
) -> list[int]:
    """Top-k node ids by absprob; ties to the shallower node, then smaller id.

    Since a child's absprob never exceeds its parent's and ties resolve
    shallower-first, any prefix of this order is ancestor closed.
    """
    ann = ann or annotate(tree)
    depths = node_depths(tree)
    pool = [n.id for n in tree.nodes if include_leaves or not n.is_leaf]
    pool.sort(key=lambda i: (-ann.absprob[i], depths[i], i))
    return pool[:k]


def select_layers(tree: Tree, k: int) -> int:
    """Largest layer count L whose nodes at depths 0..L-1 all fit in k registers."""
    depths = node_depths(tree)
    max_depth = max(depths)
    total = 0
    layer = 0
    while layer <= max_depth:
        width = sum(1 for d in depths if d == layer)
        if total + width > k:
            break
        total += width
        layer += 1
    return layer


def fifo_schedule(tree: Tree, k: int) -> dict[int, tuple[str, int]]:
    """Generation-time feature cache schedule for the if-else code of a tree.

    The cache state at a node is determined by its root path (the only code
    that can have run when the node's block executes). A miss loads into the
    next free slot, or replaces the oldest loaded entry once all k slots are
    taken; hits do not refresh age.
    """
    if k <= 0:
        return {}
    schedule: dict[int, tuple[str, int]] = {}

    def walk(node_id: int, cache: tuple[tuple[int, int], ...]):
        node = tree.nodes[node_id]
        if node.is_leaf:
            return
        fi = node.feature_index
        slot = next((s for f, s in cache if f == fi), None)
        if slot is not None:
            schedule[node_id] = ("hit", slot)
        elif len(cache) < k:
            slot = len(cache)
            schedule[node_id] = ("load", slot)
            cache = cache + ((fi, slot),)
        else:
            slot = cache[0][1]
            schedule[node_id] = ("load", slot)
            cache = cache[1:] + ((fi, slot),)
        walk(node.left_child, cache)
        walk(node.right_child, cache)

    walk(0, ())
    return schedule


def _feature_slot_count(k: int, target: TargetDesc) -> int:
    return max(0, min(k, len(target.usable_fpr)))


def plan_static_feature(ensemble: Ensemble, k: int, target: TargetDesc) -> EnsemblePlan:
    n = min(_feature_slot_count(k, target), ensemble.num_features)
    chosen = select_features(ensemble, n)
    pinned = tuple(
        Residency(reg=target.usable_fpr[i], bank="fpr", kind="feature", feature_index=fi)
        for i, fi in enumerate(chosen)
    )
    # The pin set is shared by every tree; each per-tree function reloads it
    # in its prologue because functions are emitted one per tree.
    plans = tuple(
        TreePlan(tree_index=t, residencies=pinned) for t in range(len(ensemble.trees))
    )
    return EnsemblePlan(
        strategy="sf",
        target=target.name,
        requested_registers=k,
        effective_registers=len(pinned),
        pack="none",
        include_leaves=True,
        tree_plans=plans,
        pinned=pinned,
    )


def plan_dynamic_feature(ensemble: Ensemble, k: int, target: TargetDesc) -> EnsemblePlan:
    slots = _feature_slot_count(k, target)
    slot_regs = tuple(target.usable_fpr[:slots])
    plans = []
    for t, tree in enumerate(ensemble.trees):
        schedule = fifo_schedule(tree, slots)
        used = sorted({s for _, s in schedule.values()})
        residencies = tuple(
            Residency(reg=slot_regs[s], bank="fpr", kind="feature") for s in used
        )
        plans.append(
            TreePlan(tree_index=t, residencies=residencies, fifo=schedule)
        )
    return EnsemblePlan(
        strategy="df",
        target=target.name,
        requested_registers=k,
        effective_registers=slots,
        pack="none",
        include_leaves=True,
        tree_plans=tuple(plans),
        slot_regs=slot_regs,
    )


def _node_residencies(
    tree: Tree,
    chosen: list[int],
    pool: list[tuple[str, str]],
    pack: str,
    ifelse_set: frozenset[int],
) -> tuple[Residency, ...]:
    out = []
    for i, node_id in enumerate(chosen):
        reg, bank = pool[i]
        out.append(
            Residency(
                reg=reg,
                bank=bank,
                kind="node",
                node_id=node_id,
                payload=pack_payload(tree, node_id, pack, ifelse_set),
            )
        )
    return tuple(out)


def _plan_by_nodes(
    code: str,
    ensemble: Ensemble,
    k: int,
    target: TargetDesc,
    pack: str,
    include_leaves: bool,
) -> EnsemblePlan:
    if pack not in (PACK_FULL, PACK_SPLIT):
        raise PlanError(f"unknown pack mode {pack!r}")
    pool = node_register_pool(target)
    cap = min(k, len(pool))
    plans = []
    for t, tree in enumerate(ensemble.trees):
        chosen = select_nodes(tree, cap, include_leaves=include_leaves)
        if code == "hn":
            ifelse_set = frozenset(chosen)
        elif code == "in":
            ifelse_set = frozenset(n.id for n in tree.nodes)
        else:
            ifelse_set = frozenset()
        plans.append(
            TreePlan(
                tree_index=t,
                residencies=_node_residencies(tree, chosen, pool, pack, ifelse_set),
                ifelse_set=ifelse_set,
            )
        )
    return EnsemblePlan(
        strategy=code,
        target=target.name,
        requested_registers=k,
        effective_registers=cap,
        pack=pack,
        include_leaves=include_leaves,
        tree_plans=tuple(plans),
    )


def plan_native_node(
    ensemble: Ensemble,
    k: int,
    target: TargetDesc,
    pack: str = PACK_FULL,
    include_leaves: bool = True,
) -> EnsemblePlan:
    return _plan_by_nodes("nn", ensemble, k, target, pack, include_leaves)


def plan_hybrid_node(
    ensemble: Ensemble,
    k: int,
    target: TargetDesc,
    pack: str = PACK_FULL,
    include_leaves: bool = True,
) -> EnsemblePlan:
    return _plan_by_nodes("hn", ensemble, k, target, pack, include_leaves)


def plan_ifelse_node(
    ensemble: Ensemble,
    k: int,
    target: TargetDesc,
    pack: str = PACK_FULL,
    include_leaves: bool = True,
) -> EnsemblePlan:
    # The whole tree is if-else code; residents only replace the split (or
    # prediction) immediate of their own block, so transitions stay in the
    # code structure and the packed slots are never read.
    return _plan_by_nodes("in", ensemble, k, target, pack, include_leaves)


def plan_hybrid_layer(
    ensemble: Ensemble, k: int, target: TargetDesc, pack: str = PACK_FULL
) -> EnsemblePlan:
    if pack not in (PACK_FULL, PACK_SPLIT):
        raise PlanError(f"unknown pack mode {pack!r}")
    pool = node_register_pool(target)
    cap = min(k, len(pool))
    plans = []
    for t, tree in enumerate(ensemble.trees):
        layers = select_layers(tree, cap)
        depths = node_depths(tree)
        ifelse_set = frozenset(n.id for n in tree.nodes if depths[n.id] < layers)
        # Hand out registers in the node selection order restricted to the
        # region, so the hottest of the region sits in the first registers.
        chosen = [i for i in select_nodes(tree, len(tree.nodes)) if i in ifelse_set]
        plans.append(
            TreePlan(
                tree_index=t,
                residencies=_node_residencies(tree, chosen, pool, pack, ifelse_set),
                ifelse_set=ifelse_set,
                layers=layers,
            )
        )
    return EnsemblePlan(
        strategy="hl",
        target=target.name,
        requested_registers=k,
        effective_registers=cap,
        pack=pack,
        include_leaves=True,
        tree_plans=tuple(plans),
    )


def plan_ensemble(
    ensemble: Ensemble,
    strategy: str,
    k: int,
    target: TargetDesc | str,
    pack: str = PACK_FULL,
    include_leaves: bool = True,
) -> EnsemblePlan:
    code = normalize_strategy(strategy)
    desc = get_target(target) if isinstance(target, str) else target
    if k < 0:
        raise PlanError(f"register count must be >= 0, got {k}")
    if code == "sf":
        return plan_static_feature(ensemble, k, desc)
    if code == "df":
        return plan_dynamic_feature(ensemble, k, desc)
    if code == "nn":
        return plan_native_node(ensemble, k, desc, pack, include_leaves)
    if code == "hn":
        return plan_hybrid_node(ensemble, k, desc, pack, include_leaves)
    if code == "hl":
        return plan_hybrid_layer(ensemble, k, desc, pack)
    return plan_ifelse_node(ensemble, k, desc, pack, include_leaves)


def check_plan(plan: EnsemblePlan, ensemble: Ensemble, target: TargetDesc) -> list[str]:
    """Structural plan invariants; returns human-readable violations (empty = good).

    Checked: the claimed registers come from the target's usable pools in
    hand-out order without duplicates and within budget; node residencies
    are exactly the top-k selection prefix; hl regions are maximal complete
    layer stacks; payload words match a recomputation; df schedules match a
    fresh cache simulation and slot indices stay inside the slot set.
    """
    bad: list[str] = []
    if plan.effective_registers > target.budget:
        bad.append(
            f"effective register count {plan.effective_registers} exceeds "
            f"target budget {target.budget}"
        )
    pool = node_register_pool(target)
    pool_index = {reg: i for i, (reg, _) in enumerate(pool)}
    fpr_index = {reg: i for i, reg in enumerate(target.usable_fpr)}

    for tp in plan.tree_plans:
        tree = ensemble.trees[tp.tree_index]
        where = f"tree {tp.tree_index}"
        regs = [r.reg for r in tp.residencies]
        if len(set(regs)) != len(regs):
            bad.append(f"{where}: duplicate register claim")
        if len(regs) > plan.effective_registers:
            bad.append(
                f"{where}: {len(regs)} residencies exceed plan budget "
                f"{plan.effective_registers}"
            )
        if plan.strategy in NODE_STRATEGIES:
            if [pool_index.get(r) for r in regs] != list(range(len(regs))):
                bad.append(f"{where}: registers not the pool prefix in order")
            if plan.strategy == "hl":
                layers = select_layers(tree, plan.effective_registers)
                if tp.layers != layers:
                    bad.append(f"{where}: layer count {tp.layers}, expected {layers}")
                depths = node_depths(tree)
                want = frozenset(n.id for n in tree.nodes if depths[n.id] < layers)
                if tp.ifelse_set != want:
                    bad.append(f"{where}: if-else region is not the top {layers} layers")
                want_order = [i for i in select_nodes(tree, len(tree.nodes)) if i in want]
                if list(tp.resident_node_ids()) != want_order:
                    bad.append(f"{where}: residents not the region in absprob order")
            else:
                want = select_nodes(
                    tree, plan.effective_registers, include_leaves=plan.include_leaves
                )
                if list(tp.resident_node_ids()) != want:
                    bad.append(f"{where}: residents are not the top-k node prefix")
            region = tp.ifelse_set
            for r in tp.residencies:
                want_payload = pack_payload(tree, r.node_id, plan.pack, region)
                if r.payload != want_payload:
                    bad.append(
                        f"{where}: node {r.node_id} payload {r.payload:#x} != "
                        f"{want_payload:#x}"
                    )
        elif plan.strategy == "sf":
            if tp.residencies != plan.pinned:
                bad.append(f"{where}: pin set differs from the ensemble pin set")
            want_feats = select_features(ensemble, plan.effective_registers)
            got_feats = [r.feature_index for r in plan.pinned]
            if got_feats != want_feats:
                bad.append(f"{where}: pins {got_feats} are not the suitability prefix")
            if [fpr_index.get(r.reg) for r in plan.pinned] != list(range(len(plan.pinned))):
                bad.append(f"{where}: pins not in FPR pool order")
        elif plan.strategy == "df":
            want_sched = fifo_schedule(tree, plan.effective_registers)
            if tp.fifo != want_sched:
                bad.append(f"{where}: FIFO schedule differs from simulation")
            if any(s >= len(plan.slot_regs) for _, s in tp.fifo.values()):
                bad.append(f"{where}: schedule references a slot outside the slot set")
    return bad


def plan_document(plan: EnsemblePlan) -> dict:
    """JSON-ready rendering of a plan, as the plan CLI prints it."""

    def res_doc(r: Residency) -> dict:
        d = {"reg": r.reg, "bank": r.bank, "kind": r.kind}
        if r.node_id is not None:
            d["node"] = r.node_id
        if r.feature_index is not None:
            d["feature"] = r.feature_index
        if r.payload is not None:
            d["payload"] = f"{r.payload:#018x}"
        return d

    doc = {
        "strategy": plan.strategy,
        "strategy_name": STRATEGY_NAMES[plan.strategy],
        "target": plan.target,
        "requested_registers": plan.requested_registers,
        "effective_registers": plan.effective_registers,
        "pack": plan.pack,
        "trees": [],
    }
    if plan.strategy == "sf":
        doc["pinned"] = [res_doc(r) for r in plan.pinned]
    if plan.strategy == "df":
        doc["slot_regs"] = list(plan.slot_regs)
    for tp in plan.tree_plans:
        td: dict = {"tree": tp.tree_index}
        if plan.strategy != "sf":
            td["residencies"] = [res_doc(r) for r in tp.residencies]
        if plan.strategy in ("hn", "hl"):
            td["ifelse_set"] = sorted(tp.ifelse_set)
        if plan.strategy == "hl":
            td["layers"] = tp.layers
        if plan.strategy == "df":
            td["schedule"] = {
                str(nid): {"action": a, "slot": s} for nid, (a, s) in sorted(tp.fifo.items())
            }
        doc["trees"].append(td)
    return doc
