"""Flat encoding of tree programs for the batch interpreters.

The compiled and pure-Python kernels execute the same encoded form: an
int32 instruction table of fixed width rows plus a float constant pool
and the tree's record table as parallel arrays. Encoding resolves labels
to instruction indices and resolves every resident node register read to
its concrete value (split values into the constant pool, slot words into
immediates), mirroring what the register file would hold at run time, so
the interpreters never re-derive packed payload fields.

Virtual registers become bank indices. The int bank is fixed:
idx=0, nfeat=1, nleft=2, nright=3, t=4. The float bank starts with
fval=0, sval=1, nsplit=2, ret=3 and grows one entry per physical FPR the
program actually uses for feature values (pins and cache slots), in first
use order.

Instruction rows are [op, a, b, c, d, e, flags]. Fields not used by an
opcode stay 0. Branch targets are absolute instruction indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LoweringError
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
)
from .model import LEAF_SENTINEL, Tree
from .planner import PACK_SPLIT, unpack_slot_a, unpack_slot_b, unpack_split

CODE_WIDTH = 7

OP_PROLOGUE = 0
OP_EPILOGUE = 1
OP_LOAD_FEATURE_IMM = 2
OP_LOAD_FEATURE_IND = 3
OP_USE_FEATURE = 4
OP_LOAD_NODE_RECORD = 5
OP_USE_NODE_SPLIT = 6
OP_USE_NODE_SLOT = 7
OP_CONST_F = 8
OP_CMP_LE = 9
OP_CMP_EQ = 10
OP_JMP = 11
OP_SET_INDEX_IMM = 12
OP_SET_INDEX_REG = 13
OP_RETURN = 14

# Trap codes reported by the kernels (0 means a clean batch).
TRAP_NONE = 0
TRAP_BAD_NODE_INDEX = 1
TRAP_BAD_FEATURE_INDEX = 2
TRAP_STEP_LIMIT = 3
TRAP_BAD_OPCODE = 4

TRAP_NAMES = {
    TRAP_BAD_NODE_INDEX: "node index outside the record table",
    TRAP_BAD_FEATURE_INDEX: "feature index outside the input row",
    TRAP_STEP_LIMIT: "step limit exceeded",
    TRAP_BAD_OPCODE: "bad opcode",
}

# Event kinds recorded by the kernels when an event buffer is supplied.
EV_RECORD_LOAD = 1  # a = node index
EV_FEATURE_LOAD = 2  # a = feature index, b = float bank destination
EV_FEATURE_LOAD_SCHEDULED = 3  # a = feature index, b = float bank destination

INT_BANK = {"idx": 0, "nfeat": 1, "nleft": 2, "nright": 3, "t": 4}
FLOAT_BANK_FIXED = ("fval", "sval", "nsplit", "ret")


@dataclass(frozen=True, slots=True)
class EncodedProgram:
    code: np.ndarray  # int32 [n, CODE_WIDTH]
    fconst: np.ndarray  # float64 constant pool
    table_split: np.ndarray  # float32 per node (leaf: prediction)
    table_feat: np.ndarray  # int32 per node (leaf: LEAF_SENTINEL)
    table_left: np.ndarray  # int32
    table_right: np.ndarray  # int32
    float_bank: tuple[str, ...]  # bank index -> vreg or FPR name
    min_features: int  # inputs must have at least this many columns
    program: TreeProgram

    @property
    def symbol(self) -> str:
        return self.program.symbol


def node_table_arrays(tree: Tree) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Record table as parallel arrays; a leaf stores its prediction in the
    split column and the sentinel in the feature column."""
    n = len(tree.nodes)
    split = np.zeros(n, dtype=np.float32)
    feat = np.zeros(n, dtype=np.int32)
    left = np.zeros(n, dtype=np.int32)
    right = np.zeros(n, dtype=np.int32)
    for node in tree.nodes:
        if node.is_leaf:
            split[node.id] = node.prediction
            feat[node.id] = LEAF_SENTINEL
        else:
            split[node.id] = node.split_value
            feat[node.id] = node.feature_index
            left[node.id] = node.left_child
            right[node.id] = node.right_child
    return split, feat, left, right


def encode(program: TreeProgram) -> EncodedProgram:
    pack = program.pack
    residents = {r.reg: r for r in program.residencies}

    float_bank = list(FLOAT_BANK_FIXED)

    def fbank(name: str) -> int:
        if name not in float_bank:
            float_bank.append(name)
        return float_bank.index(name)

    fconst: list[float] = []

    def const_index(value: float) -> int:
        v = float(np.float64(np.float32(value)))
        fconst.append(v)
        return len(fconst) - 1

    # First pass: label positions. A label marks the next real instruction.
    pc_of_label: dict[str, int] = {}
    pc = 0
    for item in program.items:
        if isinstance(item, Label):
            pc_of_label[item.name] = pc
        else:
            pc += 1

    min_features = 0
    rows: list[list[int]] = []

    def row(op: int, a: int = 0, b: int = 0, c: int = 0, d: int = 0, e: int = 0, flags: int = 0):
        rows.append([op, a, b, c, d, e, flags])

    def split_value(res) -> float:
        if pack == PACK_SPLIT:
            word = res.payload << 32  # value bits sit low in split-only words
        else:
            word = res.payload
        return unpack_split(word)

    for item in program.items:
        if isinstance(item, Label):
            continue
        if isinstance(item, Prologue):
            row(OP_PROLOGUE)
        elif isinstance(item, Epilogue):
            row(OP_EPILOGUE)
        elif isinstance(item, LoadFeatureMem):
            if item.indirect:
                row(OP_LOAD_FEATURE_IND, 0, fbank(item.dst))
            else:
                min_features = max(min_features, item.index + 1)
                row(OP_LOAD_FEATURE_IMM, item.index, fbank(item.dst), flags=int(item.scheduled))
        elif isinstance(item, UseFeatureReg):
            row(OP_USE_FEATURE, fbank(item.preg), fbank(item.dst), item.feature)
        elif isinstance(item, LoadNodeRecord):
            row(OP_LOAD_NODE_RECORD)
        elif isinstance(item, UseNodeReg):
            try:
                res = residents[item.preg]
            except KeyError:
                raise LoweringError(f"{item.preg} read but not a resident register") from None
            if item.field == FIELD_SPLIT:
                row(OP_USE_NODE_SPLIT, const_index(split_value(res)), fbank(item.dst), item.node_id)
            else:
                if pack == PACK_SPLIT:
                    raise LoweringError("slot read from a split-only payload")
                val = unpack_slot_a(res.payload) if item.field == FIELD_SLOT_A else unpack_slot_b(res.payload)
                row(
                    OP_USE_NODE_SLOT,
                    val,
                    INT_BANK[item.dst],
                    item.node_id,
                    1 if item.field == FIELD_SLOT_A else 2,
                )
        elif isinstance(item, ConstF):
            row(OP_CONST_F, const_index(item.value), fbank(item.dst))
        elif isinstance(item, CmpLeBranch):
            row(
                OP_CMP_LE,
                fbank(item.a),
                fbank(item.b),
                pc_of_label[item.if_true],
                pc_of_label[item.if_false],
            )
        elif isinstance(item, CmpEqBranch):
            row(OP_CMP_EQ, INT_BANK[item.a], item.imm, pc_of_label[item.if_true])
        elif isinstance(item, Jmp):
            row(OP_JMP, pc_of_label[item.target])
        elif isinstance(item, SetIndex):
            if item.imm is not None:
                row(OP_SET_INDEX_IMM, item.imm)
            else:
                row(OP_SET_INDEX_REG, INT_BANK[item.src])
        elif isinstance(item, Return):
            row(OP_RETURN, fbank(item.src))
        else:
            raise LoweringError(f"cannot encode {type(item).__name__}")

    split, feat, left, right = node_table_arrays(program.tree)
    used_features = feat[feat != LEAF_SENTINEL]
    if used_features.size:
        min_features = max(min_features, int(used_features.max()) + 1)
    return EncodedProgram(
        code=np.array(rows, dtype=np.int32).reshape(len(rows), CODE_WIDTH),
        fconst=np.array(fconst, dtype=np.float64),
        table_split=split,
        table_feat=feat,
        table_left=left,
        table_right=right,
        float_bank=tuple(float_bank),
        min_features=min_features,
        program=program,
    )


def default_step_limit(enc: EncodedProgram) -> int:
    """Generous bound: a traversal revisits the loop body at most depth
    times and the if-else families execute at most one block per level."""
    from .model import depth

    d = depth(enc.program.tree)
    return 64 + (len(enc.code) + 16) * (d + 2)


def disassemble(enc: EncodedProgram) -> str:
    """Readable rendering of an encoded program, for debugging."""
    names = {v: k for k, v in globals().items() if k.startswith("OP_")}
    out = []
    for i, r in enumerate(enc.code):
        op, a, b, c, d, e, flags = (int(x) for x in r)
        out.append(f"{i:4d}  {names.get(op, op):22s} a={a} b={b} c={c} d={d} flags={flags}")
    return "\n".join(out)
