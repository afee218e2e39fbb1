# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled batch interpreter for encoded tree programs.

Mirror of _kernel_py.run_batch; the opcode values are read from program.py
at import time so the two cannot drift apart silently, and the parity test
suite runs both over shared fixtures.
"""

import numpy as np

from . import program as _p

COMPILED = True

cdef int OP_PROLOGUE = _p.OP_PROLOGUE
cdef int OP_EPILOGUE = _p.OP_EPILOGUE
cdef int OP_LOAD_FEATURE_IMM = _p.OP_LOAD_FEATURE_IMM
cdef int OP_LOAD_FEATURE_IND = _p.OP_LOAD_FEATURE_IND
cdef int OP_USE_FEATURE = _p.OP_USE_FEATURE
cdef int OP_LOAD_NODE_RECORD = _p.OP_LOAD_NODE_RECORD
cdef int OP_USE_NODE_SPLIT = _p.OP_USE_NODE_SPLIT
cdef int OP_USE_NODE_SLOT = _p.OP_USE_NODE_SLOT
cdef int OP_CONST_F = _p.OP_CONST_F
cdef int OP_CMP_LE = _p.OP_CMP_LE
cdef int OP_CMP_EQ = _p.OP_CMP_EQ
cdef int OP_JMP = _p.OP_JMP
cdef int OP_SET_INDEX_IMM = _p.OP_SET_INDEX_IMM
cdef int OP_SET_INDEX_REG = _p.OP_SET_INDEX_REG
cdef int OP_RETURN = _p.OP_RETURN

cdef int TRAP_BAD_NODE_INDEX = _p.TRAP_BAD_NODE_INDEX
cdef int TRAP_BAD_FEATURE_INDEX = _p.TRAP_BAD_FEATURE_INDEX
cdef int TRAP_STEP_LIMIT = _p.TRAP_STEP_LIMIT
cdef int TRAP_BAD_OPCODE = _p.TRAP_BAD_OPCODE

cdef int EV_RECORD_LOAD = _p.EV_RECORD_LOAD
cdef int EV_FEATURE_LOAD = _p.EV_FEATURE_LOAD
cdef int EV_FEATURE_LOAD_SCHEDULED = _p.EV_FEATURE_LOAD_SCHEDULED


cdef int _run(const int[:, ::1] C, const double[::1] K, const float[::1] TS,
              const int[::1] TF, const int[::1] TL, const int[::1] TR,
              const float[:, ::1] X, float[::1] P, int[::1] S, int[:, ::1] E,
              int fbank_size, long long step_limit) noexcept nogil:
    cdef Py_ssize_t n_inputs = X.shape[0]
    cdef Py_ssize_t n_feat = X.shape[1]
    cdef long long n_nodes = TS.shape[0]
    cdef int ev_cap = <int> E.shape[0]
    cdef int n_ev = 0
    cdef bint overflow = False
    cdef double fbank[64]
    cdef long long ibank[5]
    cdef Py_ssize_t i
    cdef int pc, op, a, b, flags, kind
    cdef long long steps, idx, fi

    S[0] = 0
    for i in range(n_inputs):
        pc = 0
        steps = 0
        while True:
            if steps >= step_limit:
                S[0] = TRAP_STEP_LIMIT
                S[1] = <int> i
                S[2] = pc
                return -1 if overflow else n_ev
            steps += 1
            op = C[pc, 0]
            a = C[pc, 1]
            b = C[pc, 2]
            if op == OP_CMP_LE:
                pc = C[pc, 3] if fbank[a] <= fbank[b] else C[pc, 4]
            elif op == OP_CMP_EQ:
                pc = C[pc, 3] if ibank[a] == b else pc + 1
            elif op == OP_LOAD_NODE_RECORD:
                idx = ibank[0]
                if idx < 0 or idx >= n_nodes:
                    S[0] = TRAP_BAD_NODE_INDEX
                    S[1] = <int> i
                    S[2] = pc
                    return -1 if overflow else n_ev
                fbank[2] = TS[idx]
                ibank[1] = TF[idx]
                ibank[2] = TL[idx]
                ibank[3] = TR[idx]
                if ev_cap and not overflow:
                    if n_ev < ev_cap:
                        E[n_ev, 0] = <int> i
                        E[n_ev, 1] = EV_RECORD_LOAD
                        E[n_ev, 2] = <int> idx
                        E[n_ev, 3] = 0
                        n_ev += 1
                    else:
                        overflow = True
                pc += 1
            elif op == OP_LOAD_FEATURE_IMM or op == OP_LOAD_FEATURE_IND:
                fi = a if op == OP_LOAD_FEATURE_IMM else ibank[1]
                if fi < 0 or fi >= n_feat:
                    S[0] = TRAP_BAD_FEATURE_INDEX
                    S[1] = <int> i
                    S[2] = pc
                    return -1 if overflow else n_ev
                fbank[b] = X[i, fi]
                if ev_cap and not overflow:
                    if n_ev < ev_cap:
                        flags = C[pc, 6]
                        if op == OP_LOAD_FEATURE_IMM and (flags & 1):
                            kind = EV_FEATURE_LOAD_SCHEDULED
                        else:
                            kind = EV_FEATURE_LOAD
                        E[n_ev, 0] = <int> i
                        E[n_ev, 1] = kind
                        E[n_ev, 2] = <int> fi
                        E[n_ev, 3] = b
                        n_ev += 1
                    else:
                        overflow = True
                pc += 1
            elif op == OP_USE_FEATURE:
                fbank[b] = fbank[a]
                pc += 1
            elif op == OP_USE_NODE_SPLIT:
                fbank[b] = K[a]
                pc += 1
            elif op == OP_USE_NODE_SLOT:
                ibank[b] = a
                pc += 1
            elif op == OP_CONST_F:
                fbank[b] = K[a]
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
                P[i] = <float> fbank[a]
                break
            else:
                S[0] = TRAP_BAD_OPCODE
                S[1] = <int> i
                S[2] = pc
                return -1 if overflow else n_ev
    return -1 if overflow else n_ev


def run_batch(code, fconst, tsplit, tfeat, tleft, tright, features, preds,
              status, events, fbank_size, step_limit):
    """Run one encoded program over every row of features; see _kernel_py."""
    if fbank_size > 64:
        raise ValueError("float bank larger than the compiled kernel supports")
    if events is None:
        events = np.zeros((0, 4), dtype=np.int32)
    return _run(code, fconst, tsplit, tfeat, tleft, tright, features, preds,
                status, events, fbank_size, step_limit)
