"""Pure-Python batch interpreter for encoded tree programs.

Same contract as the compiled twin in _kernel.pyx; kernel.py picks one at
import time. Keep the semantics of the two in lockstep: the test suite
diffs them instruction for instruction through shared fixtures.
"""

from __future__ import annotations

from .program import (
    OP_CMP_EQ,
    OP_CMP_LE,
    OP_CONST_F,
    OP_EPILOGUE,
    OP_JMP,
    OP_LOAD_FEATURE_IMM,
    OP_LOAD_FEATURE_IND,
    OP_LOAD_NODE_RECORD,
    OP_PROLOGUE,
    OP_RETURN,
    OP_SET_INDEX_IMM,
    OP_SET_INDEX_REG,
    OP_USE_FEATURE,
    OP_USE_NODE_SLOT,
    OP_USE_NODE_SPLIT,
    TRAP_BAD_FEATURE_INDEX,
    TRAP_BAD_NODE_INDEX,
    TRAP_BAD_OPCODE,
    TRAP_STEP_LIMIT,
    EV_FEATURE_LOAD,
    EV_FEATURE_LOAD_SCHEDULED,
    EV_RECORD_LOAD,
)

COMPILED = False


def run_batch(
    code,
    fconst,
    tsplit,
    tfeat,
    tleft,
    tright,
    features,
    preds,
    status,
    events,
    fbank_size,
    step_limit,
):
    """Run one encoded program over every row of features.

    preds (float32 [n]) receives one prediction per row. status (int32 [3])
    receives (trap, input index, pc) on the first trap; the batch stops
    there. events (int32 [cap, 4]) records (input, kind, a, b) rows while
    capacity lasts. Returns the number of recorded events, or -1 if the
    buffer overflowed (recording stops, execution continues).
    """
    # Plain lists keep the interpreter loop free of per-element numpy
    # scalar boxing, which dominates otherwise.
    crows = [tuple(int(x) for x in row) for row in code]
    consts = [float(x) for x in fconst]
    split = [float(x) for x in tsplit]
    feat = [int(x) for x in tfeat]
    left = [int(x) for x in tleft]
    right = [int(x) for x in tright]
    rows = features.tolist()
    n_nodes = len(split)
    ev_cap = 0 if events is None else events.shape[0]
    n_ev = 0
    overflow = False

    status[0] = 0
    fbank = [0.0] * fbank_size
    ibank = [0] * 5
    for i, frow in enumerate(rows):
        n_feat = len(frow)
        pc = 0
        steps = 0
        while True:
            if steps >= step_limit:
                status[0] = TRAP_STEP_LIMIT
                status[1] = i
                status[2] = pc
                return -1 if overflow else n_ev
            steps += 1
            op, a, b, c, d, e, flags = crows[pc]
            if op == OP_CMP_LE:
                pc = c if fbank[a] <= fbank[b] else d
            elif op == OP_CMP_EQ:
                pc = c if ibank[a] == b else pc + 1
            elif op == OP_LOAD_NODE_RECORD:
                idx = ibank[0]
                if idx < 0 or idx >= n_nodes:
                    status[0] = TRAP_BAD_NODE_INDEX
                    status[1] = i
                    status[2] = pc
                    return -1 if overflow else n_ev
                fbank[2] = split[idx]
                ibank[1] = feat[idx]
                ibank[2] = left[idx]
                ibank[3] = right[idx]
                if ev_cap and not overflow:
                    if n_ev < ev_cap:
                        events[n_ev, 0] = i
                        events[n_ev, 1] = EV_RECORD_LOAD
                        events[n_ev, 2] = idx
                        events[n_ev, 3] = 0
                        n_ev += 1
                    else:
                        overflow = True
                pc += 1
            elif op == OP_LOAD_FEATURE_IMM or op == OP_LOAD_FEATURE_IND:
                fi = a if op == OP_LOAD_FEATURE_IMM else ibank[1]
                if fi < 0 or fi >= n_feat:
                    status[0] = TRAP_BAD_FEATURE_INDEX
                    status[1] = i
                    status[2] = pc
                    return -1 if overflow else n_ev
                fbank[b] = frow[fi]
                if ev_cap and not overflow:
                    if n_ev < ev_cap:
                        kind = (
                            EV_FEATURE_LOAD_SCHEDULED
                            if (op == OP_LOAD_FEATURE_IMM and flags & 1)
                            else EV_FEATURE_LOAD
                        )
                        events[n_ev, 0] = i
                        events[n_ev, 1] = kind
                        events[n_ev, 2] = fi
                        events[n_ev, 3] = b
                        n_ev += 1
                    else:
                        overflow = True
                pc += 1
            elif op == OP_USE_FEATURE:
                fbank[b] = fbank[a]
                pc += 1
            elif op == OP_USE_NODE_SPLIT:
                fbank[b] = consts[a]
                pc += 1
            elif op == OP_USE_NODE_SLOT:
                ibank[b] = a
                pc += 1
            elif op == OP_CONST_F:
                fbank[b] = consts[a]
                pc += 1
            elif op == OP_SET_INDEX_IMM:
                ibank[0] = a
                pc += 1
            elif op == OP_SET_INDEX_REG:
                ibank[0] = ibank[a]
                pc += 1
            elif op == OP_JMP:
                pc = a
            elif op == OP_PROLOGUE or op == OP_EPILOGUE:
                pc += 1
            elif op == OP_RETURN:
                preds[i] = fbank[a]
                break
            else:
                status[0] = TRAP_BAD_OPCODE
                status[1] = i
                status[2] = pc
                return -1 if overflow else n_ev
    return -1 if overflow else n_ev
