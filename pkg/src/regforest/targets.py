"""Target register files and calling conventions.

A target description lists which general purpose and floating point
registers the generated function may claim for tree payloads, in the order
the planner hands them out, and which registers the lowering keeps for
itself as scratch. The usable lists exclude argument, return, and scratch
registers, so the register budget of a target is simply the sum of the two
list lengths.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True, slots=True)
class TargetDesc:
    name: str
    # Allocation pools, in hand-out order. GPRs hold packed node payloads,
    # FPRs hold pinned feature values (and packed payload overflow).
    usable_gpr: tuple[str, ...]
    usable_fpr: tuple[str, ...]
    # Registers the lowering may clobber freely between branches.
    scratch_gpr: tuple[str, ...]
    scratch_fpr: tuple[str, ...]
    # Where the caller puts the feature array pointer and expects the result.
    arg_ptr: str
    ret_fpr: str
    # GPRs the prologue must save before claiming (callee saved under the ABI).
    callee_saved_gpr: tuple[str, ...] = ()
    callee_saved_fpr: tuple[str, ...] = ()

    @property
    def budget(self) -> int:
        return len(self.usable_gpr) + len(self.usable_fpr)


# System V AMD64. rdi carries the feature pointer and stays live, rax/rcx/
# rdx/rsi/r8/r9 are caller-saved scratch, xmm0..xmm3 are comparison and
# return scratch. That leaves 8 GPRs (6 of them callee saved) and 12 FPRs.
X86_64 = TargetDesc(
    name="x86_64",
    usable_gpr=("rbx", "r12", "r13", "r14", "r15", "rbp", "r10", "r11"),
    usable_fpr=tuple(f"xmm{i}" for i in range(4, 16)),
    scratch_gpr=("rax", "rcx", "rdx", "rsi", "r8", "r9"),
    scratch_fpr=("xmm0", "xmm1", "xmm2", "xmm3"),
    arg_ptr="rdi",
    ret_fpr="xmm0",
    callee_saved_gpr=("rbx", "rbp", "r12", "r13", "r14", "r15"),
    callee_saved_fpr=(),
)

# AAPCS64. x0 carries the feature pointer, x1..x8 and v0..v7 are scratch.
# x19..x28 are callee saved, x9..x15 are free temporaries; v8..v15 must be
# saved (low 64 bits) and v16..v31 are free.
AARCH64 = TargetDesc(
    name="aarch64",
    usable_gpr=tuple(f"x{i}" for i in range(19, 29)) + tuple(f"x{i}" for i in range(9, 16)),
    usable_fpr=tuple(f"v{i}" for i in range(8, 16)) + tuple(f"v{i}" for i in range(16, 32)),
    scratch_gpr=tuple(f"x{i}" for i in range(1, 9)),
    scratch_fpr=tuple(f"v{i}" for i in range(0, 8)),
    arg_ptr="x0",
    ret_fpr="v0",
    callee_saved_gpr=tuple(f"x{i}" for i in range(19, 29)),
    callee_saved_fpr=tuple(f"v{i}" for i in range(8, 16)),
)

# Documentation target with x86-like capacity: plans made against it fit
# x86_64 exactly, and the interpreter executes against it directly.
ABSTRACT = TargetDesc(
    name="abstract",
    usable_gpr=tuple(f"g{i}" for i in range(8)),
    usable_fpr=tuple(f"f{i}" for i in range(12)),
    scratch_gpr=("s0", "s1", "s2"),
    scratch_fpr=("t0", "t1"),
    arg_ptr="p0",
    ret_fpr="t0",
)

TARGETS: dict[str, TargetDesc] = {
    "x86_64": X86_64,
    "aarch64": AARCH64,
    "abstract": ABSTRACT,
}


def get_target(name: str) -> TargetDesc:
    try:
        return TARGETS[name]
    except KeyError:
        raise KeyError(f"unknown target {name!r}, expected one of {sorted(TARGETS)}") from None
