"""x86-64 lowering (System V ABI, GAS Intel syntax).

Register use is fixed. rdi keeps the feature pointer for the whole call.
Virtual registers map to caller-saved scratch: idx=rcx, nfeat=rsi,
nleft=r8, nright=r9, t=rdx for the int bank; fval=xmm1, sval=xmm2,
nsplit=xmm3, ret=xmm0 for the float bank. rax is the lowering's own
temporary (record address, payload shifts); rdx doubles as the record
offset because t is never live across a record load.

Comparisons: `ucomiss b, a` then `jae` takes the branch exactly when
a <= b and the operands are ordered; any NaN sets CF and falls to the
false side, matching the tree walk rule that NaN routes right.
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

INT_REG = {"idx": "rcx", "nfeat": "rsi", "nleft": "r8", "nright": "r9", "t": "rdx"}
FLOAT_REG = {"fval": "xmm1", "sval": "xmm2", "nsplit": "xmm3", "ret": "xmm0"}

# what the lowering itself writes, beyond any payload registers
SCRATCH = ("rax", "rcx", "rdx", "rsi", "r8", "r9", "xmm0", "xmm1", "xmm2", "xmm3")
# payload registers from the caller-saved part of the usable pool are
# clobbered; callee-saved ones are saved and restored instead
_CALLER_SAVED_POOL = frozenset(
    {"r10", "r11"} | {f"xmm{i}" for i in range(4, 16)}
)

_R32 = {
    "rax": "eax", "rbx": "ebx", "rcx": "ecx", "rdx": "edx", "rsi": "esi",
    "rdi": "edi", "rbp": "ebp", "r8": "r8d", "r9": "r9d", "r10": "r10d",
    "r11": "r11d", "r12": "r12d", "r13": "r13d", "r14": "r14d", "r15": "r15d",
}
_R16 = {
    "rax": "ax", "rbx": "bx", "rcx": "cx", "rdx": "dx", "rsi": "si",
    "rdi": "di", "rbp": "bp", "r8": "r8w", "r9": "r9w", "r10": "r10w",
    "r11": "r11w", "r12": "r12w", "r13": "r13w", "r14": "r14w", "r15": "r15w",
}


def lower_program(program: TreeProgram) -> EmittedUnit:
    sym = program.symbol
    tsym = table_symbol(sym) if uses_table(program) else None
    split_only = program.pack == PACK_SPLIT
    bank_of = {r.reg: r.bank for r in program.residencies}
    saves: tuple[str, ...] = ()
    out: list[str] = [
        "\t.intel_syntax noprefix",
        "\t.text",
        f"\t.globl {sym}",
        f"\t.type {sym}, @function",
        f"{sym}:",
    ]

    def lab(name: str) -> str:
        return f".L{sym}_{name}"

    def op(text: str):
        out.append("\t" + text)

    def fsrc(name: str) -> str:
        return FLOAT_REG.get(name, name)

    def load_payload_word(preg: str):
        # 64 bit payload into rax, wherever it lives.
        if bank_of[preg] == "gpr":
            op(f"mov rax, {preg}")
        else:
            op(f"movq rax, {preg}")

    items = program.items
    for pos, item in enumerate(items):
        if isinstance(item, Label):
            out.append(f"{lab(item.name)}:")
        elif isinstance(item, Prologue):
            saves = item.saves
            for reg in saves:
                op(f"push {reg}")
            for preg, word in item.payloads:
                if bank_of[preg] == "gpr":
                    if split_only:
                        op(f"mov {_R32[preg]}, {word:#x}")
                    else:
                        op(f"movabs {preg}, {word:#x}")
                elif split_only:
                    op(f"mov eax, {word:#x}")
                    op(f"movd {preg}, eax")
                else:
                    op(f"movabs rax, {word:#x}")
                    op(f"movq {preg}, rax")
        elif isinstance(item, Epilogue):
            for reg in reversed(saves):
                op(f"pop {reg}")
        elif isinstance(item, LoadFeatureMem):
            dst = fsrc(item.dst)
            if item.indirect:
                op(f"movss {dst}, dword ptr [rdi + {INT_REG['nfeat']}*4]")
            else:
                op(f"movss {dst}, dword ptr [rdi + {4 * item.index}]")
        elif isinstance(item, UseFeatureReg):
            op(f"movaps {fsrc(item.dst)}, {item.preg}")
        elif isinstance(item, LoadNodeRecord):
            # rdx holds the 16 byte record offset; t is dead across this.
            op(f"mov rdx, {INT_REG['idx']}")
            op("shl rdx, 4")
            op(f"lea rax, [rip + {tsym}]")
            op(f"movss {FLOAT_REG['nsplit']}, dword ptr [rax + rdx]")
            op(f"movzx {_R32[INT_REG['nfeat']]}, word ptr [rax + rdx + 4]")
            op(f"movzx {_R32[INT_REG['nleft']]}, word ptr [rax + rdx + 6]")
            op(f"movzx {_R32[INT_REG['nright']]}, word ptr [rax + rdx + 8]")
        elif isinstance(item, UseNodeReg):
            preg = item.preg
            if item.field == FIELD_SPLIT:
                dst = fsrc(item.dst)
                if split_only:
                    if bank_of[preg] == "gpr":
                        op(f"movd {dst}, {_R32[preg]}")
                    else:
                        op(f"movaps {dst}, {preg}")
                else:
                    load_payload_word(preg)
                    op("shr rax, 32")
                    op(f"movd {dst}, eax")
            else:
                dst32 = _R32[INT_REG[item.dst]]
                if split_only:
                    raise LoweringError("slot read from a split-only payload")
                if item.field == FIELD_SLOT_A:
                    load_payload_word(preg)
                    op("shr rax, 16")
                    op(f"movzx {dst32}, ax")
                elif bank_of[preg] == "gpr":
                    op(f"movzx {dst32}, {_R16[preg]}")
                else:
                    load_payload_word(preg)
                    op(f"movzx {dst32}, ax")
        elif isinstance(item, ConstF):
            op(f"mov eax, {f32_bits(item.value):#x}")
            op(f"movd {fsrc(item.dst)}, eax")
        elif isinstance(item, CmpLeBranch):
            op(f"ucomiss {fsrc(item.b)}, {fsrc(item.a)}")
            op(f"jae {lab(item.if_true)}")
            nxt = items[pos + 1] if pos + 1 < len(items) else None
            if not (isinstance(nxt, Label) and nxt.name == item.if_false):
                op(f"jmp {lab(item.if_false)}")
        elif isinstance(item, CmpEqBranch):
            op(f"cmp {_R32[INT_REG[item.a]]}, {item.imm}")
            op(f"je {lab(item.if_true)}")
        elif isinstance(item, Jmp):
            op(f"jmp {lab(item.target)}")
        elif isinstance(item, SetIndex):
            dst = _R32[INT_REG["idx"]]
            if item.imm is not None:
                op(f"mov {dst}, {item.imm}")
            else:
                op(f"mov {dst}, {_R32[INT_REG[item.src]]}")
        elif isinstance(item, Return):
            src = fsrc(item.src)
            if src != "xmm0":
                op(f"movaps xmm0, {src}")
            op("ret")
        else:
            raise LoweringError(f"x86_64 cannot lower {type(item).__name__}")
    out.append(f"\t.size {sym}, .-{sym}")
    clobbers = list(SCRATCH) + [
        r.reg for r in program.residencies if r.reg in _CALLER_SAVED_POOL
    ]
    return make_unit(
        symbol=sym,
        target="x86_64",
        code_lines=out,
        table_lines=record_table_asm(program.tree, tsym) if tsym else None,
        note='\t.section .note.GNU-stack,"",@progbits',
        clobbers=clobbers,
        scratch=SCRATCH,
        tsym=tsym,
    )
