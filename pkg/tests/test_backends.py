import ctypes
import json
import platform
import shutil
import subprocess

import numpy as np
import pytest

from regforest.backends import (
    BASELINE_KINDS,
    baseline_symbol,
    emit_baseline_source,
    emit_to_dir,
    lower,
    record_table_asm,
)
from regforest.errors import LoweringError
from regforest.ir import (
    build_ensemble_programs,
    build_ifelse_baseline,
    build_native_baseline,
)
from regforest.model import LEAF_SENTINEL, Ensemble, f32_bits, logical_infer
from regforest.randtrees import random_inputs, random_tree
from regforest.targets import get_target

ALL = ("sf", "df", "nn", "hn", "hl", "in")

ON_X86_HOST = platform.machine() in ("x86_64", "AMD64")
HAVE_CLANG = shutil.which("clang") is not None

needs_x86_host = pytest.mark.skipif(not ON_X86_HOST, reason="x86-64 host required")
needs_clang = pytest.mark.skipif(not HAVE_CLANG, reason="clang cross-assembler required")

ABI_PROBE_ASM = """\
\t.intel_syntax noprefix
\t.text
\t.globl abi_probe
\t.type abi_probe, @function
# uint64_t abi_probe(const float *x, void *fn, float *out)
# calls fn(x) with every callee-saved GPR holding a sentinel, stores the
# float result through out, and returns a bitmask of corrupted registers
abi_probe:
\tpush rbx
\tpush rbp
\tpush r12
\tpush r13
\tpush r14
\tpush r15
\tpush rdx
\tmov rax, rsi
\tmov rbx, 0x1111111111111111
\tmov rbp, 0x2222222222222222
\tmov r12, 0x3333333333333333
\tmov r13, 0x4444444444444444
\tmov r14, 0x5555555555555555
\tmov r15, 0x6666666666666666
\tcall rax
\tpop rcx
\tmovss dword ptr [rcx], xmm0
\txor eax, eax
\tmov rdx, 0x1111111111111111
\tcmp rbx, rdx
\tje 1f
\tor eax, 1
1:
\tmov rdx, 0x2222222222222222
\tcmp rbp, rdx
\tje 2f
\tor eax, 2
2:
\tmov rdx, 0x3333333333333333
\tcmp r12, rdx
\tje 3f
\tor eax, 4
3:
\tmov rdx, 0x4444444444444444
\tcmp r13, rdx
\tje 4f
\tor eax, 8
4:
\tmov rdx, 0x5555555555555555
\tcmp r14, rdx
\tje 5f
\tor eax, 16
5:
\tmov rdx, 0x6666666666666666
\tcmp r15, rdx
\tje 6f
\tor eax, 32
6:
\tpop r15
\tpop r14
\tpop r13
\tpop r12
\tpop rbp
\tpop rbx
\tret
\t.section .note.GNU-stack,"",@progbits
"""


def all_units(ensemble, target, ks=(0, 4, 20)):
    units = {}
    for strategy in ALL:
        for k in ks:
            _, programs = build_ensemble_programs(ensemble, strategy, k, target=target)
            for prog in programs:
                unit = lower(prog)
                units[f"{unit.symbol}_k{k}"] = unit
    for builder in (build_native_baseline, build_ifelse_baseline):
        for prog in builder(ensemble, target=target):
            unit = lower(prog)
            units[unit.symbol] = unit
    return units


def assemble(src_path, obj_path, target):
    if target == "x86_64":
        cmd = ["cc", "-c", str(src_path), "-o", str(obj_path)]
    else:
        cmd = ["clang", "--target=aarch64-linux-gnu", "-c", str(src_path), "-o", str(obj_path)]
    r = subprocess.run(cmd, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr[:4000]


def build_shared(tmp_path, sources, out_name):
    so = tmp_path / out_name
    cmd = ["cc", "-shared", "-o", str(so)] + [str(s) for s in sources]
    r = subprocess.run(cmd, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr[:4000]
    return so


def tree_fn(lib, symbol):
    fn = getattr(lib, symbol)
    fn.restype = ctypes.c_float
    fn.argtypes = [ctypes.POINTER(ctypes.c_float)]
    return fn


def as_cfloat_ptr(row):
    arr = np.ascontiguousarray(row, dtype=np.float32)
    return arr.ctypes.data_as(ctypes.POINTER(ctypes.c_float))


def test_lower_is_deterministic(t2_ensemble):
    for target in ("x86_64", "aarch64"):
        for strategy in ALL:
            _, programs = build_ensemble_programs(t2_ensemble, strategy, 3, target=target)
            a = lower(programs[0])
            b = lower(programs[0])
            assert a.text == b.text
            assert a.clobbers == b.clobbers


def test_lower_rejects_abstract(t2_ensemble):
    _, programs = build_ensemble_programs(t2_ensemble, "nn", 2, target="abstract")
    with pytest.raises(LoweringError, match="abstract"):
        lower(programs[0])


def test_lower_rejects_target_mismatch(t2_ensemble):
    _, programs = build_ensemble_programs(t2_ensemble, "nn", 2, target="x86_64")
    with pytest.raises(LoweringError, match="replan"):
        lower(programs[0], target="aarch64")


def test_clobbers_exclude_callee_saved(rng):
    tree = random_tree(rng, max_depth=9, num_features=4)
    ens = Ensemble(trees=(tree,), num_features=4)
    for target_name in ("x86_64", "aarch64"):
        target = get_target(target_name)
        callee_saved = set(target.callee_saved_gpr) | set(target.callee_saved_fpr)
        for strategy in ALL:
            _, programs = build_ensemble_programs(ens, strategy, 20, target=target_name)
            unit = lower(programs[0])
            assert not (set(unit.clobbers) & callee_saved)
            assert set(unit.scratch) <= set(unit.clobbers)


def test_record_table_round_trip(rng):
    # parse the directives back and compare against the node fields
    tree = random_tree(rng, max_depth=6, num_features=5)
    lines = record_table_asm(tree, "t_nodes")
    assert f"\t.globl t_nodes" in lines
    assert f"\t.hidden t_nodes" in lines
    recs = []
    for i, ln in enumerate(lines):
        if ln.startswith("\t.4byte"):
            bits = int(ln.split()[1], 16)
            feat, left, right = (int(v) for v in lines[i + 1].split(None, 1)[1].split(","))
            recs.append((bits, feat, left, right))
    assert len(recs) == len(tree.nodes)
    for node, (bits, feat, left, right) in zip(tree.nodes, recs):
        if node.is_leaf:
            assert (bits, feat, left, right) == (f32_bits(node.prediction), LEAF_SENTINEL, 0, 0)
        else:
            assert bits == f32_bits(node.split_value)
            assert (feat, left, right) == (node.feature_index, node.left_child, node.right_child)


def test_both_targets_assemble(tmp_path, rng):
    trees = tuple(random_tree(rng, max_depth=7, num_features=5) for _ in range(3))
    ens = Ensemble(trees=trees, num_features=5)
    for target in ("x86_64", "aarch64"):
        if target == "aarch64" and not HAVE_CLANG:
            pytest.skip("clang cross-assembler required")
        units = all_units(ens, target)
        src = tmp_path / f"all_{target}.s"
        seen = set()
        with open(src, "w") as fh:
            for unit in units.values():
                if unit.symbol in seen:
                    continue
                seen.add(unit.symbol)
                fh.write(unit.text)
        assemble(src, tmp_path / f"all_{target}.o", target)


@needs_x86_host
def test_host_execution_matches_oracle(tmp_path, rng):
    trees = tuple(random_tree(rng, max_depth=7, num_features=5) for _ in range(3))
    ens = Ensemble(trees=trees, num_features=5)
    rows = random_inputs(rng, 200, 5)
    for strategy in ALL:
        for k in (0, 4, 20):
            _, programs = build_ensemble_programs(ens, strategy, k, target="x86_64")
            src = tmp_path / f"{strategy}_{k}.s"
            with open(src, "w") as fh:
                for prog in programs:
                    fh.write(lower(prog).text)
            so = build_shared(tmp_path, [src], f"{strategy}_{k}.so")
            lib = ctypes.CDLL(str(so))
            for prog, tree in zip(programs, trees):
                fn = tree_fn(lib, prog.symbol)
                for row in rows[:50]:
                    got = np.float32(fn(as_cfloat_ptr(row)))
                    assert got == np.float32(logical_infer(tree, row))


@needs_x86_host
def test_abi_callee_saved_registers_survive(tmp_path, rng):
    tree = random_tree(rng, max_depth=8, num_features=4)
    ens = Ensemble(trees=(tree,), num_features=4)
    rows = random_inputs(rng, 50, 4)
    probe_src = tmp_path / "abi_probe.s"
    probe_src.write_text(ABI_PROBE_ASM)
    for strategy in ALL:
        # k=20 claims every callee-saved GPR the target offers
        _, programs = build_ensemble_programs(ens, strategy, 20, target="x86_64")
        src = tmp_path / f"abi_{strategy}.s"
        src.write_text(lower(programs[0]).text)
        so = build_shared(tmp_path, [src, probe_src], f"abi_{strategy}.so")
        lib = ctypes.CDLL(str(so))
        probe = lib.abi_probe
        probe.restype = ctypes.c_uint64
        probe.argtypes = [
            ctypes.POINTER(ctypes.c_float),
            ctypes.c_void_p,
            ctypes.POINTER(ctypes.c_float),
        ]
        fn_addr = ctypes.cast(getattr(lib, programs[0].symbol), ctypes.c_void_p)
        out = ctypes.c_float()
        for row in rows:
            mask = probe(as_cfloat_ptr(row), fn_addr, ctypes.byref(out))
            assert mask == 0, f"{strategy}: corrupted callee-saved mask {mask:#x}"
            assert np.float32(out.value) == np.float32(logical_infer(tree, row))


def test_emit_to_dir_manifest(tmp_path, t2_ensemble):
    _, programs = build_ensemble_programs(t2_ensemble, "nn", 2, target="x86_64")
    manifest = emit_to_dir(programs, str(tmp_path), meta={"strategy": "nn"})
    assert manifest["strategy"] == "nn"
    assert manifest["tables_file"] == "tables.s"
    assert (tmp_path / "tables.s").exists()
    assert (tmp_path / "manifest.json").exists()
    entry = manifest["trees"][0]
    assert entry["symbol"] == "forest_tree_0_nn"
    assert (tmp_path / entry["file"]).exists()
    assert entry["table_symbol"] == "forest_tree_0_nn_nodes"
    assert entry["clobbers"]
    assert manifest["scratch"]
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk == manifest
    # the split files assemble and link on the host
    if ON_X86_HOST:
        sources = [tmp_path / entry["file"], tmp_path / "tables.s"]
        build_shared(tmp_path, sources, "split.so")


def test_baseline_source_t1_example(tmp_path, t1, t2, lone_leaf):
    if not ON_X86_HOST:
        pytest.skip("x86-64 host required")
    trees = {"t1": t1, "t2": t2, "leaf": lone_leaf}
    srcs = []
    for i, tree in enumerate(trees.values()):
        for kind in BASELINE_KINDS:
            path = tmp_path / f"b{i}_{kind}.c"
            path.write_text(emit_baseline_source(tree, kind, tree_index=i))
            srcs.append(path)
    so = build_shared(tmp_path, srcs, "baselines.so")
    lib = ctypes.CDLL(str(so))
    for kind in BASELINE_KINDS:
        fn = tree_fn(lib, baseline_symbol(0, kind))
        assert fn(as_cfloat_ptr([0.6])) == 1.0  # strictly above the split
        assert fn(as_cfloat_ptr([0.5])) == 0.0  # boundary goes left
        fn = tree_fn(lib, baseline_symbol(1, kind))
        assert fn(as_cfloat_ptr([0.3, 0.9])) == 2.0
        fn = tree_fn(lib, baseline_symbol(2, kind))
        assert fn(as_cfloat_ptr([0.0])) == 0.25


def test_baseline_source_rejects_bad_kind(t1):
    with pytest.raises(ValueError):
        emit_baseline_source(t1, "vectorized")


def test_unit_text_decomposes(t2_ensemble):
    _, programs = build_ensemble_programs(t2_ensemble, "nn", 2, target="x86_64")
    unit = lower(programs[0])
    assert unit.has_table
    assert unit.text.startswith(unit.code_text.rsplit("\t.section .note.GNU-stack", 1)[0])
    assert unit.table_symbol in unit.table_text
    assert unit.code_text.count(".note.GNU-stack") == 1
    assert unit.table_text.count(".note.GNU-stack") == 1
