"""AArch64 lowering (AAPCS64, GAS syntax).

x0 keeps the feature pointer. Virtual registers map to caller-saved
scratch: idx=x1, nfeat=x2, nleft=x3, nright=x4, t=x5 for the int bank;
fval=s1, sval=s2, nsplit=s3, ret=s0 for the float bank; x6/x7 are the
lowering's temporaries. Payload registers are read through their d views
(full 64 bit words) or s views (split-only float payloads); v8..v15 only
need their low 64 bits preserved, so stp/ldp of the d views satisfies
the ABI.

Comparisons: `fcmp a, b` then `b.ls` takes the branch exactly when
a <= b and the operands are ordered; unordered sets C and clears Z, so
NaN falls to the false side.
"""

from __future__ import annotations

from ..errors import LoweringError
from ..ir import (
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
from ..model import f32_bits
from ..planner import PACK_SPLIT
from .common import EmittedUnit, make_unit, record_table_asm, table_symbol, uses_table

INT_REG = {"idx": "x1", "nfeat": "x2", "nleft": "x3", "nright": "x4", "t": "x5"}
FLOAT_REG = {"fval": "s1", "sval": "s2", "nsplit": "s3", "ret": "s0"}

# what the lowering itself writes, beyond any payload registers
SCRATCH = ("x1", "x2", "x3", "x4", "x5", "x6", "x7", "v0", "v1", "v2", "v3")
# payload registers from the caller-saved part of the usable pool are
# clobbered; x19-x28 are saved, and v8-v15 keep their low 64 bits
_CALLER_SAVED_POOL = frozenset(
    {f"x{i}" for i in range(9, 16)} | {f"v{i}" for i in range(16, 32)}
)


def _w(xreg: str) -> str:
    return "w" + xreg[1:]


def _view(preg: str, prefix: str) -> str:
    # v8 -> s8/d8 for FPR payloads; GPR names pass through x->w as needed.
    return prefix + preg[1:]


def _mov_imm64(reg: str, word: int) -> list[str]:
    """movz/movk sequence for an arbitrary 64 bit (or 32 bit w-reg) constant."""
    width = 32 if reg.startswith("w") else 64
    chunks = [(word >> s) & 0xFFFF for s in range(0, width, 16)]
    ops = []
    first = next((i for i, c in enumerate(chunks) if c), 0)
    ops.append(f"movz {reg}, #{chunks[first]:#x}" + (f", lsl #{16 * first}" if first else ""))
    for i in range(first + 1, len(chunks)):
        if chunks[i]:
            ops.append(f"movk {reg}, #{chunks[i]:#x}, lsl #{16 * i}")
    return ops


def lower_program(program: TreeProgram) -> EmittedUnit:
    sym = program.symbol
    tsym = table_symbol(sym) if uses_table(program) else None
    split_only = program.pack == PACK_SPLIT
    bank_of = {r.reg: r.bank for r in program.residencies}
    push_pairs: list[tuple[str, ...]] = []
    out: list[str] = [
        "\t.text",
        f"\t.globl {sym}",
        f"\t.type {sym}, %function",
        "\t.p2align 2",
        f"{sym}:",
    ]

    def lab(name: str) -> str:
        return f".L{sym}_{name}"

    def op(text: str):
        out.append("\t" + text)

    def fsrc(name: str) -> str:
        if name in FLOAT_REG:
            return FLOAT_REG[name]
        return _view(name, "s")

    def payload_to_x6(preg: str):
        if bank_of[preg] == "gpr":
            op(f"mov x6, {preg}")
        else:
            op(f"fmov x6, {_view(preg, 'd')}")

    items = program.items
    for pos, item in enumerate(items):
        if isinstance(item, Label):
            out.append(f"{lab(item.name)}:")
        elif isinstance(item, Prologue):
            gprs = [r for r in item.saves if r.startswith("x")]
            fprs = [_view(r, "d") for r in item.saves if r.startswith("v")]
            for group in (gprs, fprs):
                for i in range(0, len(group) - 1, 2):
                    push_pairs.append((group[i], group[i + 1]))
                if len(group) % 2:
                    push_pairs.append((group[-1],))
            for pair in push_pairs:
                if len(pair) == 2:
                    op(f"stp {pair[0]}, {pair[1]}, [sp, #-16]!")
                else:
                    op(f"str {pair[0]}, [sp, #-16]!")
            for preg, word in item.payloads:
                if bank_of[preg] == "gpr":
                    dst = _w(preg) if split_only else preg
                    for text in _mov_imm64(dst, word):
                        op(text)
                elif split_only:
                    for text in _mov_imm64("w6", word):
                        op(text)
                    op(f"fmov {_view(preg, 's')}, w6")
                else:
                    for text in _mov_imm64("x6", word):
                        op(text)
                    op(f"fmov {_view(preg, 'd')}, x6")
        elif isinstance(item, Epilogue):
            for pair in reversed(push_pairs):
                if len(pair) == 2:
                    op(f"ldp {pair[0]}, {pair[1]}, [sp], #16")
                else:
                    op(f"ldr {pair[0]}, [sp], #16")
        elif isinstance(item, LoadFeatureMem):
            dst = fsrc(item.dst)
            if item.indirect:
                op(f"ldr {dst}, [x0, {INT_REG['nfeat']}, lsl #2]")
            else:
                off = 4 * item.index
                if off <= 16380:
                    op(f"ldr {dst}, [x0, #{off}]")
                else:
                    op(f"mov w6, #{item.index}")
                    op(f"ldr {dst}, [x0, x6, lsl #2]")
        elif isinstance(item, UseFeatureReg):
            op(f"fmov {fsrc(item.dst)}, {_view(item.preg, 's')}")
        elif isinstance(item, LoadNodeRecord):
            op(f"adrp x6, {tsym}")
            op(f"add x6, x6, :lo12:{tsym}")
            op(f"add x7, x6, {INT_REG['idx']}, lsl #4")
            op(f"ldr {FLOAT_REG['nsplit']}, [x7]")
            op(f"ldrh {_w(INT_REG['nfeat'])}, [x7, #4]")
            op(f"ldrh {_w(INT_REG['nleft'])}, [x7, #6]")
            op(f"ldrh {_w(INT_REG['nright'])}, [x7, #8]")
        elif isinstance(item, UseNodeReg):
            preg = item.preg
            if item.field == FIELD_SPLIT:
                dst = fsrc(item.dst)
                if split_only:
                    if bank_of[preg] == "gpr":
                        op(f"fmov {dst}, {_w(preg)}")
                    else:
                        op(f"fmov {dst}, {_view(preg, 's')}")
                else:
                    payload_to_x6(preg)
                    op("lsr x6, x6, #32")
                    op(f"fmov {dst}, w6")
            else:
                if split_only:
                    raise LoweringError("slot read from a split-only payload")
                dst = INT_REG[item.dst]
                shift = 16 if item.field == FIELD_SLOT_A else 0
                if bank_of[preg] == "gpr":
                    op(f"ubfx {dst}, {preg}, #{shift}, #16")
                else:
                    payload_to_x6(preg)
                    op(f"ubfx {dst}, x6, #{shift}, #16")
        elif isinstance(item, ConstF):
            for text in _mov_imm64("w6", f32_bits(item.value)):
                op(text)
            op(f"fmov {fsrc(item.dst)}, w6")
        elif isinstance(item, CmpLeBranch):
            op(f"fcmp {fsrc(item.a)}, {fsrc(item.b)}")
            op(f"b.ls {lab(item.if_true)}")
            nxt = items[pos + 1] if pos + 1 < len(items) else None
            if not (isinstance(nxt, Label) and nxt.name == item.if_false):
                op(f"b {lab(item.if_false)}")
        elif isinstance(item, CmpEqBranch):
            a = _w(INT_REG[item.a])
            if item.imm <= 4095:
                op(f"cmp {a}, #{item.imm}")
            else:
                op(f"mov w6, #{item.imm}")
                op(f"cmp {a}, w6")
            op(f"b.eq {lab(item.if_true)}")
        elif isinstance(item, Jmp):
            op(f"b {lab(item.target)}")
        elif isinstance(item, SetIndex):
            dst = _w(INT_REG["idx"])
            if item.imm is not None:
                op(f"mov {dst}, #{item.imm}")
            else:
                op(f"mov {dst}, {_w(INT_REG[item.src])}")
        elif isinstance(item, Return):
            src = fsrc(item.src)
            if src != "s0":
                op(f"fmov s0, {src}")
            op("ret")
        else:
            raise LoweringError(f"aarch64 cannot lower {type(item).__name__}")
    out.append(f"\t.size {sym}, .-{sym}")
    clobbers = list(SCRATCH) + [
        r.reg for r in program.residencies if r.reg in _CALLER_SAVED_POOL
    ]
    return make_unit(
        symbol=sym,
        target="aarch64",
        code_lines=out,
        table_lines=record_table_asm(program.tree, tsym) if tsym else None,
        note='\t.section .note.GNU-stack,"",%progbits',
        clobbers=clobbers,
        scratch=SCRATCH,
        tsym=tsym,
    )
