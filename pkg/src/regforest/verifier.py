"""Equivalence and residency checking for generated programs.

Three independent executions of the same tree exist: the logical walk over
the model (model.logical_infer), the IR interpreter here, and the batch
kernels over the encoded form. The interpreter is deliberately written
against the instruction objects, not the encoded rows, so it shares no
decoding code with the kernels; agreement between all three is evidence
the encoding and the builders preserve semantics.

The interpreter also polices the register discipline the plans promise:
feature reads through registers must see the value a scheduled load put
there, packed payload registers must never be clobbered, and reads of
registers nothing defined are faults. Event streams recorded by the batch
kernels support the same checks in aggregate over whole corpora: a
resident node id appearing in a record load event, or an unscheduled
feature load of a pinned feature, means the plan's residency promise was
broken by the generated code.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import TrapError
from .ir import (
    FIELD_SLOT_A,
    FIELD_SPLIT,
    CmpEqBranch,
    CmpLeBranch,
    ConstF,
    Epilogue,
    Jmp,
    Label,
    LoadFeatureMem,
    LoadNodeRecord,
    Prologue,
    Return,
    SetIndex,
    TreeProgram,
    UseFeatureReg,
    UseNodeReg,
    build_ensemble_programs,
)
from .kernel import predict_batch
from .model import (
    LEAF_SENTINEL,
    Ensemble,
    Tree,
    depth,
    f32_from_bits,
    logical_infer,
    logical_trace,
)
from .planner import PACK_FULL, PACK_SPLIT, unpack_slot_a, unpack_slot_b
from .program import EV_FEATURE_LOAD, EV_RECORD_LOAD, encode
from .randtrees import leaf_reaching_inputs


@dataclass(slots=True)
class InterpResult:
    result: float
    steps: int
    violations: list[str]
    record_loads: list[int]  # node ids fetched from the table
    feature_loads: list[tuple[str, int]]  # ("mem"|"scheduled", feature)
    trace: list  # executed items when collect_trace
    # record loads that fetched split data (inner nodes); a walk of path
    # length L makes exactly L-1 of these, leaf fetches excluded
    split_loads: list[int] = field(default_factory=list)


def _payload_field(payload: int, pack: str, field: str) -> float | int:
    if field == FIELD_SPLIT:
        word = payload << 32 if pack == PACK_SPLIT else payload
        return f32_from_bits((word >> 32) & 0xFFFFFFFF)
    if pack != PACK_FULL:
        raise TrapError(f"slot read from {pack} payload")
    return unpack_slot_a(payload) if field == FIELD_SLOT_A else unpack_slot_b(payload)


def interpret(
    program: TreeProgram,
    row,
    step_limit: int | None = None,
    collect_trace: bool = False,
) -> InterpResult:
    """Execute the IR for one input row with full register discipline checks.

    Machine faults (bad indexes, unwritten register reads, step budget)
    raise TrapError. Residency discipline breaches that real hardware
    would execute anyway (a stale cache slot, a clobbered payload) are
    collected in violations and execution continues with the register's
    actual content, the way silicon would.
    """
    items = program.items
    row = np.asarray(row, dtype=np.float32).reshape(-1)
    if step_limit is None:
        step_limit = 64 + (len(items) + 16) * (depth(program.tree) + 2)
    label_at = {it.name: i for i, it in enumerate(items) if isinstance(it, Label)}
    tree = program.tree

    ints: dict[str, int | None] = {k: None for k in ("idx", "nfeat", "nleft", "nright", "t")}
    floats: dict[str, float | None] = {k: None for k in ("fval", "sval", "nsplit", "ret")}
    feat_regs: dict[str, tuple[int, float]] = {}
    payload_regs: dict[str, int] = {}

    res = InterpResult(
        result=float("nan"), steps=0, violations=[], record_loads=[], feature_loads=[], trace=[]
    )

    def rint(name: str) -> int:
        v = ints[name]
        if v is None:
            raise TrapError(f"read of unwritten int register {name!r}")
        return v

    def rfloat(name: str) -> float:
        v = floats[name]
        if v is None:
            raise TrapError(f"read of unwritten float register {name!r}")
        return v

    pos = 0
    while True:
        if pos >= len(items):
            raise TrapError("fell off the end of the program")
        item = items[pos]
        if isinstance(item, Label):
            pos += 1
            continue
        res.steps += 1
        if res.steps > step_limit:
            raise TrapError(f"step limit {step_limit} exceeded", pc=pos)
        if collect_trace:
            res.trace.append(item)
        if isinstance(item, Prologue):
            for reg, word in item.payloads:
                payload_regs[reg] = word
            pos += 1
        elif isinstance(item, Epilogue):
            pos += 1
        elif isinstance(item, LoadFeatureMem):
            fi = rint("nfeat") if item.indirect else item.index
            if not 0 <= fi < row.shape[0]:
                raise TrapError(f"feature index {fi} outside the input row", pc=pos)
            value = float(row[fi])
            if item.dst in floats:
                floats[item.dst] = value
            else:
                if item.dst in payload_regs:
                    res.violations.append(
                        f"pc {pos}: feature load clobbers payload register {item.dst}"
                    )
                    del payload_regs[item.dst]
                feat_regs[item.dst] = (fi, value)
            res.feature_loads.append(("scheduled" if item.scheduled else "mem", fi))
            pos += 1
        elif isinstance(item, UseFeatureReg):
            if item.preg not in feat_regs:
                raise TrapError(f"read of never-loaded feature register {item.preg}", pc=pos)
            held_feature, held_value = feat_regs[item.preg]
            if held_feature != item.feature:
                res.violations.append(
                    f"pc {pos}: {item.preg} holds feature {held_feature}, "
                    f"code expects feature {item.feature}"
                )
            floats[item.dst] = held_value
            pos += 1
        elif isinstance(item, LoadNodeRecord):
            idx = rint("idx")
            if not 0 <= idx < len(tree.nodes):
                raise TrapError(f"node index {idx} outside the table", pc=pos)
            node = tree.nodes[idx]
            if node.is_leaf:
                floats["nsplit"] = float(np.float32(node.prediction))
                ints["nfeat"] = LEAF_SENTINEL
                ints["nleft"] = 0
                ints["nright"] = 0
            else:
                floats["nsplit"] = float(np.float32(node.split_value))
                ints["nfeat"] = node.feature_index
                ints["nleft"] = node.left_child
                ints["nright"] = node.right_child
                res.split_loads.append(idx)
            res.record_loads.append(idx)
            pos += 1
        elif isinstance(item, UseNodeReg):
            if item.preg not in payload_regs:
                raise TrapError(f"read of non-resident register {item.preg}", pc=pos)
            value = _payload_field(payload_regs[item.preg], program.pack, item.field)
            if item.field == FIELD_SPLIT:
                floats[item.dst] = float(value)
            else:
                ints[item.dst] = int(value)
            pos += 1
        elif isinstance(item, ConstF):
            floats[item.dst] = float(np.float32(item.value))
            pos += 1
        elif isinstance(item, CmpLeBranch):
            taken = rfloat(item.a) <= rfloat(item.b)  # NaN compares false
            pos = label_at[item.if_true if taken else item.if_false]
        elif isinstance(item, CmpEqBranch):
            if rint(item.a) == item.imm:
                pos = label_at[item.if_true]
            else:
                pos += 1
        elif isinstance(item, Jmp):
            pos = label_at[item.target]
        elif isinstance(item, SetIndex):
            ints["idx"] = item.imm if item.imm is not None else rint(item.src)
            pos += 1
        elif isinstance(item, Return):
            res.result = float(np.float32(rfloat(item.src)))
            return res
        else:
            raise TrapError(f"cannot interpret {type(item).__name__}", pc=pos)


def check_event_stream(program: TreeProgram, events) -> list[str]:
    """Aggregate residency checks over a batch kernel event recording.

    - No record load may name a node that is register resident.
    - Feature strategies may not fall back to memory for covered features:
      with pins, an unscheduled load of a pinned feature is a violation;
      with cache slots, any unscheduled load at all is (every feature read
      of the if-else code is scheduled through the cache).
    """
    bad: list[str] = []
    resident_nodes = {r.node_id for r in program.residencies if r.kind == "node"}
    pinned = {r.feature_index for r in program.pinned}
    has_slots = bool(program.slot_regs)
    for row in np.asarray(events):
        inp, kind, a, b = (int(x) for x in row)
        if kind == EV_RECORD_LOAD and a in resident_nodes:
            bad.append(f"input {inp}: record load of resident node {a}")
        elif kind == EV_FEATURE_LOAD:
            if a in pinned:
                bad.append(f"input {inp}: memory load of pinned feature {a}")
            if has_slots:
                bad.append(f"input {inp}: memory load of feature {a} bypassed the cache")
    return bad


def residency_report(program: TreeProgram, rows) -> list[str]:
    """Interpreter-level residency violations over a set of input rows."""
    bad: list[str] = []
    for i, row in enumerate(np.asarray(rows, dtype=np.float32)):
        out = interpret(program, row)
        bad.extend(f"input {i}: {v}" for v in out.violations)
    return bad


def _event_cap(tree: Tree, program: TreeProgram, n_rows: int) -> int:
    per_row = 2 * depth(tree) + len(program.pinned) + 8
    return n_rows * per_row


@dataclass(frozen=True, slots=True)
class DiffReport:
    strategy: str
    k: int
    pack: str
    trees: int
    inputs: int
    mismatches: int
    event_violations: int
    first_mismatch: str | None

    @property
    def ok(self) -> bool:
        return self.mismatches == 0 and self.event_violations == 0


def differential_check(
    ensemble: Ensemble,
    strategy: str,
    k: int,
    rows,
    target: str = "abstract",
    pack: str = PACK_FULL,
    impl=None,
    with_events: bool = True,
) -> DiffReport:
    """Bit-exact comparison of kernel output against the logical tree walk
    for every tree and input row, plus aggregate event residency checks."""
    rows = np.ascontiguousarray(rows, dtype=np.float32)
    plan, programs = build_ensemble_programs(ensemble, strategy, k, target, pack)
    mismatches = 0
    ev_bad = 0
    first = None
    for program, tree in zip(programs, ensemble.trees):
        enc = encode(program)
        cap = _event_cap(tree, program, rows.shape[0]) if with_events else 0
        preds, events, overflow = predict_batch(enc, rows, impl=impl, events_cap=cap)
        expected = np.fromiter(
            (logical_infer(tree, row) for row in rows), dtype=np.float32, count=rows.shape[0]
        )
        neq = np.nonzero(preds != expected)[0]
        if neq.size:
            mismatches += int(neq.size)
            if first is None:
                j = int(neq[0])
                first = (
                    f"{program.symbol} input {j}: kernel {preds[j]!r} "
                    f"!= logical {expected[j]!r}"
                )
        if with_events:
            if overflow:
                ev_bad += 1
                first = first or f"{program.symbol}: event buffer overflow"
            bad = check_event_stream(program, events)
            ev_bad += len(bad)
            if bad and first is None:
                first = f"{program.symbol}: {bad[0]}"
    return DiffReport(
        strategy=plan.strategy,
        k=k,
        pack=plan.pack,
        trees=len(programs),
        inputs=int(rows.shape[0]),
        mismatches=mismatches,
        event_violations=ev_bad,
        first_mismatch=first,
    )


def brute_force_check(tree: Tree, programs_for_tree, num_features: int) -> list[str]:
    """Per-leaf exhaustive check: synthesize one input per leaf sitting on
    the decision boundary of its path, confirm the logical walk ends at
    that leaf, then require every given program to produce that leaf's
    prediction both in the interpreter and the kernel."""
    bad = []
    for leaf_id, row in leaf_reaching_inputs(tree, num_features):
        trace = logical_trace(tree, row)
        if trace[-1] != leaf_id:
            bad.append(f"leaf {leaf_id}: synthesized input reaches {trace[-1]} instead")
            continue
        want = np.float32(tree.nodes[leaf_id].prediction)
        arr = np.asarray(row, dtype=np.float32).reshape(1, -1)
        for program in programs_for_tree:
            got_i = interpret(program, arr[0])
            if np.float32(got_i.result) != want:
                bad.append(
                    f"leaf {leaf_id} {program.symbol}: interpreter {got_i.result!r} != {want!r}"
                )
            preds, _, _ = predict_batch(encode(program), arr)
            if preds[0] != want:
                bad.append(f"leaf {leaf_id} {program.symbol}: kernel {preds[0]!r} != {want!r}")
    return bad


def live_payload_fields(program: TreeProgram) -> dict[str, set[str]]:
    """Payload fields each resident register actually serves to the code."""
    lives: dict[str, set[str]] = {}
    for item in program.items:
        if isinstance(item, UseNodeReg):
            lives.setdefault(item.preg, set()).add(item.field)
    return lives


def mutation_check(program: TreeProgram, rows, impl=None) -> list[str]:
    """Sensitivity proof that resident payloads are really read.

    Every live field of every payload register is perturbed and the
    program must change result on at least one row; a payload whose
    mutation goes unnoticed is not actually serving the code. Split
    values are forced to infinity so every row that crossed the node
    flips sides (a one-ulp nudge can hide when no row sits on that exact
    boundary); slot indices are retargeted at the node's other child, so
    rerouted rows land in the sibling subtree even when a native
    fallback would re-walk the table correctly. Rows should include the
    per-leaf boundary inputs so every block executes. Returns the list
    of insensitive fields.
    """
    rows = np.ascontiguousarray(rows, dtype=np.float32)
    base_preds, _, _ = predict_batch(encode(program), rows, impl=impl)
    lives = live_payload_fields(program)
    tree = program.tree
    pos_inf = 0x7F800000
    neg_inf = 0xFF800000
    insensitive = []
    for i, r in enumerate(program.residencies):
        node = tree.nodes[r.node_id]
        for field in sorted(lives.get(r.reg, ())):
            word = r.payload
            if field == FIELD_SPLIT:
                shift = 32 if program.pack == PACK_FULL else 0
                cur = (word >> shift) & 0xFFFFFFFF
                new = neg_inf if cur == pos_inf else pos_inf
                word = (word & ~(0xFFFFFFFF << shift)) | (new << shift)
            else:
                shift = 16 if field == FIELD_SLOT_A else 0
                cur = (word >> shift) & 0xFFFF
                sibling = node.right_child if cur == node.left_child else node.left_child
                word = (word & ~(0xFFFF << shift)) | (sibling << shift)
            mutated = list(program.residencies)
            mutated[i] = dataclasses.replace(r, payload=word)
            prog2 = dataclasses.replace(program, residencies=tuple(mutated))
            try:
                preds, _, _ = predict_batch(encode(prog2), rows, impl=impl)
            except TrapError:
                continue  # a trap is a behavior change
            if np.array_equal(preds, base_preds):
                insensitive.append(f"{program.symbol}: {r.reg} {field} mutation unnoticed")
    return insensitive
