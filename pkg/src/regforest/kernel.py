"""Batch execution front end and kernel selection.

The compiled interpreter (regforest._kernel, built from Cython) is used
when the extension imported cleanly; otherwise the pure-Python twin takes
over. REGFOREST_PURE_PYTHON=1 forces the fallback, which the parity tests
and the kernel benchmark use to pin each side explicitly.
"""

from __future__ import annotations

import os
import time

import numpy as np

from . import _kernel_py
from .errors import TrapError
from .program import TRAP_NAMES, EncodedProgram, default_step_limit

try:
    from . import _kernel as _compiled
except ImportError:
    _compiled = None

_FORCE_PURE = os.environ.get("REGFOREST_PURE_PYTHON", "") not in ("", "0")
_impl = _kernel_py if (_FORCE_PURE or _compiled is None) else _compiled

COMPILED = bool(_impl.COMPILED)


def active_kernel() -> str:
    return "compiled" if COMPILED else "python"


def available_kernels() -> dict[str, object]:
    out = {"python": _kernel_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out


def prepare_inputs(features, min_features: int) -> np.ndarray:
    x = np.ascontiguousarray(features, dtype=np.float32)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise ValueError(f"feature array must be 2-d, got shape {x.shape}")
    if x.shape[1] < min_features:
        raise ValueError(
            f"program reads feature index {min_features - 1} "
            f"but inputs have {x.shape[1]} columns"
        )
    return x


def predict_batch(
    enc: EncodedProgram,
    features,
    impl=None,
    step_limit: int | None = None,
    events_cap: int = 0,
):
    """Predictions for every input row, plus the recorded event rows.

    Returns (preds float32 [n], events int32 [m, 4], overflowed bool).
    Event rows are (input, kind, a, b); pass events_cap > 0 to record.
    Raises TrapError when any input faults, identifying the instruction.
    """
    mod = impl if impl is not None else _impl
    x = prepare_inputs(features, enc.min_features)
    preds = np.zeros(x.shape[0], dtype=np.float32)
    status = np.zeros(3, dtype=np.int32)
    events = np.zeros((events_cap, 4), dtype=np.int32)
    limit = step_limit if step_limit is not None else default_step_limit(enc)
    n_ev = mod.run_batch(
        enc.code,
        enc.fconst,
        enc.table_split,
        enc.table_feat,
        enc.table_left,
        enc.table_right,
        x,
        preds,
        status,
        events,
        len(enc.float_bank),
        limit,
    )
    if status[0] != 0:
        name = TRAP_NAMES.get(int(status[0]), f"trap {int(status[0])}")
        raise TrapError(
            f"{enc.symbol}: {name} (input {int(status[1])}, pc {int(status[2])})",
            pc=int(status[2]),
        )
    overflowed = n_ev < 0
    return preds, events[: max(n_ev, 0)], overflowed


def predict_one(enc: EncodedProgram, row) -> float:
    preds, _, _ = predict_batch(enc, row)
    return float(preds[0])


def kernel_bench(encoded: list[EncodedProgram], features, reps: int = 5) -> dict:
    """Median wall time per kernel for running every program over features.

    Reports ns per (program, input) pair so numbers stay comparable across
    corpus sizes. The compiled entry is absent when the extension is not
    built.
    """
    x = prepare_inputs(features, max(e.min_features for e in encoded))
    results: dict[str, dict] = {}
    pairs = len(encoded) * x.shape[0]
    for name, mod in available_kernels().items():
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            for enc in encoded:
                predict_batch(enc, x, impl=mod)
            times.append(time.perf_counter() - t0)
        med = sorted(times)[len(times) // 2]
        results[name] = {
            "median_s": med,
            "ns_per_call": med / pairs * 1e9,
            "reps": reps,
        }
    if "compiled" in results:
        results["speedup"] = results["python"]["ns_per_call"] / results["compiled"]["ns_per_call"]
    return results
