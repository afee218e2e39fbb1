"""Build-and-measure harness.

Every (strategy, k) configuration is assembled into its own runner
binary together with a plain C driver loop, so the measured symbols are
exactly the emitted `forest_tree_<i>_<strategy>` functions and nothing
is shared between configurations. The two basic implementations are
compiled from portable C at default compiler settings and serve as the
normalization denominators: record-table strategies divide by the
native baseline, if-else strategies by the if-else baseline, and the
hybrids report both ratios.

Timing is wall-clock monotonic around the full batch loop (tuples are
processed per tree, tree-major). Measurement is a matched-pairs design:
each repetition round runs the denominator binary and the subject
binary back to back, the round's ratio comes from adjacent-in-time
medians, and the reported normalized time is the median over rounds.
Under a noisy scheduler this discards disturbed rounds instead of
letting them skew one side of the division. A binary is never measured
before an interpreter-level differential check passes, and its in-run
checksum must match the baseline's.
"""

from __future__ import annotations

import math
import os
import platform
import shutil
import statistics
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import emit_baseline_source, lower
from .errors import ToolchainError, ValidationError
from .ir import build_ensemble_programs
from .model import Ensemble, depth, load_model
from .planner import PACK_FULL, normalize_strategy
from .verifier import differential_check

NATIVE_FAMILY = frozenset({"nn", "sf", "hn", "hl"})
IFELSE_FAMILY = frozenset({"in", "df"})
HYBRIDS = frozenset({"hn", "hl"})

# calibration aims for at least this much work per timed repetition so
# clock_gettime granularity stays well under the noise we tolerate
TARGET_REP_NS = 12_000_000
MAX_PASSES = 20_000
# timed repetitions inside one runner invocation; each alternation round
# takes the median of these as its sample
REPS_PER_ROUND = 2

CSV_HEADER = "strategy,k,dataset,normalized_time,variance"


@dataclass(frozen=True, slots=True)
class BenchConfig:
    model: str
    data: str | tuple[str, ...]
    strategies: tuple[str, ...] = ("nn", "sf", "hn", "hl", "in", "df")
    registers: tuple[int, ...] = (5, 10, 20)
    reps: int = 8  # alternation rounds per measured pair
    batch_size: int | None = None
    target: str = "x86_64"
    cc: str | None = None
    pack: str = PACK_FULL
    workdir: str | None = None
    verify_inputs: int = 256

    @property
    def datasets(self) -> tuple[str, ...]:
        return (self.data,) if isinstance(self.data, str) else tuple(self.data)


@dataclass(frozen=True, slots=True)
class BenchRow:
    strategy: str
    k: int
    dataset: str
    median_ns: int
    normalized: float
    variance: float
    baseline: str  # denominator kind
    checksum: float
    normalized_ifelse: float | None = None  # hybrids only: second comparison


@dataclass(frozen=True, slots=True)
class BenchReport:
    rows: tuple[BenchRow, ...]
    geomeans: dict[tuple[str, str], float]
    size_class: str
    passes: int
    reps: int
    baseline_median_ns: dict[tuple[str, str], int] = field(default_factory=dict)

    def to_csv(self, include_baselines: bool = False) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            if not include_baselines and r.strategy in ("native", "ifelse"):
                continue
            lines.append(
                f"{r.strategy},{r.k},{r.dataset},{r.normalized:.6f},{r.variance:.3e}"
            )
        return "\n".join(lines) + "\n"


def geometric_mean(values) -> float:
    vals = list(values)
    if not vals:
        raise ValueError("geometric mean of an empty sequence")
    return math.exp(sum(math.log(v) for v in vals) / len(vals))


def size_class_of(ensemble: Ensemble) -> str:
    """Small means every tree has at most 10 split levels."""
    levels = max(depth(t) - 1 for t in ensemble.trees)
    return "small" if levels <= 10 else "large"


def hl_register_values(registers) -> tuple[int, ...]:
    """Snap each requested k to the largest cumulative complete-layer
    count (1, 3, 7, 15, ...) that fits; the layer strategy cannot use
    budgets between those points."""
    out: list[int] = []
    for k in registers:
        snapped = 0
        layer_sum = 1
        while layer_sum <= k:
            snapped = layer_sum
            layer_sum = 2 * layer_sum + 1
        if snapped not in out:
            out.append(snapped)
    return tuple(out)


def _resolve_cc(config: BenchConfig) -> str:
    cc = config.cc or os.environ.get("REGFOREST_CC") or "cc"
    if shutil.which(cc) is None:
        raise ToolchainError(f"compiler {cc!r} not found on PATH")
    return cc


def _host_matches(target: str) -> bool:
    machine = platform.machine().lower()
    if target == "x86_64":
        return machine in ("x86_64", "amd64")
    if target == "aarch64":
        return machine in ("aarch64", "arm64")
    return False


def runner_source(symbols) -> str:
    """C driver: load a raw float32 matrix, run the full batch per tree
    (tree-major), print per-rep wall time and a double checksum."""
    externs = "\n".join(f"extern float {s}(const float *);" for s in symbols)
    fnlist = ",\n    ".join(symbols)
    return f"""\
#include <stdio.h>
#include <stdlib.h>
#include <time.h>

{externs}

typedef float (*tree_fn)(const float *);
static tree_fn trees[] = {{
    {fnlist}
}};

int main(int argc, char **argv) {{
    if (argc != 6) {{
        fprintf(stderr, "usage: runner data.bin nrows nfeat reps passes\\n");
        return 2;
    }}
    FILE *f = fopen(argv[1], "rb");
    if (!f) {{ perror(argv[1]); return 2; }}
    long nrows = strtol(argv[2], 0, 10);
    long nfeat = strtol(argv[3], 0, 10);
    long reps = strtol(argv[4], 0, 10);
    long passes = strtol(argv[5], 0, 10);
    size_t count = (size_t)nrows * (size_t)nfeat;
    float *data = malloc(count * sizeof(float));
    if (!data || fread(data, sizeof(float), count, f) != count) {{
        fprintf(stderr, "short read\\n");
        return 2;
    }}
    fclose(f);
    long ntrees = (long)(sizeof(trees) / sizeof(trees[0]));
    /* untimed warm-up pass: fault in code and data pages */
    volatile double sink = 0.0;
    for (long t = 0; t < ntrees; ++t) {{
        const float *row = data;
        for (long i = 0; i < nrows; ++i, row += nfeat)
            sink += trees[t](row);
    }}
    for (long r = 0; r < reps; ++r) {{
        double checksum = 0.0;
        struct timespec t0, t1;
        clock_gettime(CLOCK_MONOTONIC, &t0);
        for (long p = 0; p < passes; ++p) {{
            checksum = 0.0;
            for (long t = 0; t < ntrees; ++t) {{
                tree_fn fn = trees[t];
                const float *row = data;
                for (long i = 0; i < nrows; ++i, row += nfeat)
                    checksum += fn(row);
            }}
        }}
        clock_gettime(CLOCK_MONOTONIC, &t1);
        long long ns = (t1.tv_sec - t0.tv_sec) * 1000000000LL
                     + (t1.tv_nsec - t0.tv_nsec);
        printf("rep %lld %.17g\\n", ns, checksum);
    }}
    free(data);
    return 0;
}}
"""


def _compile(cc: str, out_bin: str, sources) -> None:
    cmd = [cc, "-o", out_bin, *sources]
    run = subprocess.run(cmd, capture_output=True, text=True)
    if run.returncode != 0 and "clock_gettime" in run.stderr:
        run = subprocess.run(cmd + ["-lrt"], capture_output=True, text=True)
    if run.returncode != 0:
        raise ToolchainError(
            f"{' '.join(cmd)} failed:\n{run.stderr.strip()[:2000]}"
        )


@dataclass(frozen=True, slots=True)
class PairResult:
    subject_median_ns: int
    baseline_median_ns: int
    normalized: float
    variance: float
    subject_checksum: float
    baseline_checksum: float
    alt_normalized: float | None = None
    alt_checksum: float | None = None


def _measure_pair(baseline_bin: str, subject_bin: str, data_bin: str,
                  nrows: int, nfeat: int, rounds: int, passes: int,
                  alt_bin: str | None = None) -> PairResult:
    """Alternate denominator and subject (and optionally a second
    denominator) every round; normalize within rounds so slow spells in
    the environment cancel instead of landing on one side."""
    base_pool: list[int] = []
    subj_pool: list[int] = []
    ratios: list[float] = []
    alt_ratios: list[float] = []
    base_sum = subj_sum = alt_sum = None
    for _ in range(rounds):
        tb, base_sum = _measure(baseline_bin, data_bin, nrows, nfeat,
                                REPS_PER_ROUND, passes)
        ts, subj_sum = _measure(subject_bin, data_bin, nrows, nfeat,
                                REPS_PER_ROUND, passes)
        base_pool.extend(tb)
        subj_pool.extend(ts)
        ratios.append(statistics.median(ts) / statistics.median(tb))
        if alt_bin is not None:
            ta, alt_sum = _measure(alt_bin, data_bin, nrows, nfeat,
                                   REPS_PER_ROUND, passes)
            alt_ratios.append(statistics.median(ts) / statistics.median(ta))
    return PairResult(
        subject_median_ns=int(statistics.median(subj_pool)),
        baseline_median_ns=int(statistics.median(base_pool)),
        normalized=statistics.median(ratios),
        variance=statistics.pvariance(ratios),
        subject_checksum=subj_sum,
        baseline_checksum=base_sum,
        alt_normalized=statistics.median(alt_ratios) if alt_bin else None,
        alt_checksum=alt_sum,
    )


def _measure(bin_path: str, data_bin: str, nrows: int, nfeat: int,
             reps: int, passes: int) -> tuple[list[int], float]:
    run = subprocess.run(
        [bin_path, data_bin, str(nrows), str(nfeat), str(reps), str(passes)],
        capture_output=True, text=True,
    )
    if run.returncode != 0:
        raise ToolchainError(
            f"runner {bin_path} exited {run.returncode}: {run.stderr.strip()[:500]}"
        )
    times: list[int] = []
    sums: list[float] = []
    for line in run.stdout.splitlines():
        parts = line.split()
        if len(parts) == 3 and parts[0] == "rep":
            times.append(int(parts[1]))
            sums.append(float(parts[2]))
    if len(times) != reps:
        raise ToolchainError(f"runner produced {len(times)} of {reps} repetitions")
    if len(set(sums)) != 1:
        raise ValidationError(f"nondeterministic checksum from {bin_path}")
    return times, sums[0]


def _load_rows(path: str, num_features: int, batch_size: int | None) -> np.ndarray:
    rows = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if rows.shape[1] != num_features:
        raise ValueError(
            f"dataset {path} has {rows.shape[1]} columns, model wants {num_features}"
        )
    if batch_size is not None and batch_size != len(rows):
        if batch_size < len(rows):
            rows = rows[:batch_size]
        else:
            rows = np.resize(rows, (batch_size, num_features))
    return np.ascontiguousarray(rows, dtype=np.float32)


def _build_baseline_bin(cc: str, workdir: Path, ensemble: Ensemble, kind: str) -> str:
    sources = []
    symbols = []
    for i, tree in enumerate(ensemble.trees):
        src = workdir / f"{kind}_{i}.c"
        src.write_text(emit_baseline_source(tree, kind, tree_index=i))
        sources.append(str(src))
        symbols.append(f"forest_tree_{i}_{kind}")
    runner = workdir / f"runner_{kind}.c"
    runner.write_text(runner_source(symbols))
    out = workdir / f"bench_{kind}"
    _compile(cc, str(out), [str(runner), *sources])
    return str(out)


def _build_strategy_bin(cc: str, workdir: Path, ensemble: Ensemble,
                        strategy: str, k: int, config: BenchConfig) -> str:
    plan, programs = build_ensemble_programs(
        ensemble, strategy, k, target=config.target, pack=config.pack
    )
    asm = workdir / f"{strategy}_{k}.s"
    with asm.open("w") as fh:
        for p in programs:
            fh.write(lower(p).text)
    runner = workdir / f"runner_{strategy}_{k}.c"
    runner.write_text(runner_source([p.symbol for p in programs]))
    out = workdir / f"bench_{strategy}_{k}"
    _compile(cc, str(out), [str(runner), str(asm)])
    return str(out)


def run_bench(config: BenchConfig) -> BenchReport:
    if config.reps < 3:
        raise ValueError("repetitions must be at least 3")
    cc = _resolve_cc(config)
    if not _host_matches(config.target):
        raise ToolchainError(
            f"cannot execute {config.target} binaries on a "
            f"{platform.machine()} host"
        )
    ensemble = load_model(Path(config.model).read_text())
    nfeat = ensemble.num_features
    strategies = tuple(normalize_strategy(s) for s in config.strategies)
    size_class = size_class_of(ensemble)

    top = Path(config.workdir) if config.workdir else Path(
        tempfile.mkdtemp(prefix="regforest_bench_")
    )
    top.mkdir(parents=True, exist_ok=True)

    rows: list[BenchRow] = []
    baseline_median: dict[tuple[str, str], int] = {}
    passes = 1

    for ds_path in config.datasets:
        ds_name = Path(ds_path).stem
        data = _load_rows(ds_path, nfeat, config.batch_size)
        nrows = len(data)
        wd = top / ds_name
        wd.mkdir(parents=True, exist_ok=True)
        data_bin = wd / "data.bin"
        data.tofile(data_bin)

        base_bin = {
            kind: _build_baseline_bin(cc, wd, ensemble, kind)
            for kind in ("native", "ifelse")
        }

        # calibrate passes on a short warm run; first rep is cold, use the min
        cal_times, _ = _measure(base_bin["native"], str(data_bin), nrows, nfeat, 3, 1)
        passes = max(1, min(MAX_PASSES, -(-TARGET_REP_NS // max(min(cal_times), 1))))

        base_sum: dict[str, float] = {}
        for kind in ("native", "ifelse"):
            pair = _measure_pair(
                base_bin[kind], base_bin[kind], str(data_bin),
                nrows, nfeat, config.reps, passes,
            )
            base_sum[kind] = pair.subject_checksum
            baseline_median[(ds_name, kind)] = pair.baseline_median_ns
            rows.append(BenchRow(
                strategy=kind, k=0, dataset=ds_name,
                median_ns=pair.subject_median_ns,
                normalized=pair.normalized,
                variance=pair.variance,
                baseline=kind,
                checksum=pair.subject_checksum,
            ))
        if base_sum["native"] != base_sum["ifelse"]:
            raise ValidationError(
                "native and if-else baselines disagree on the batch checksum"
            )

        verify_rows = data[: min(config.verify_inputs, nrows)]
        for strategy in strategies:
            ks = (hl_register_values(config.registers)
                  if strategy == "hl" else config.registers)
            for k in ks:
                report = differential_check(
                    ensemble, strategy, k, verify_rows,
                    target=config.target, pack=config.pack,
                )
                if not report.ok:
                    raise ValidationError(
                        f"differential check failed for {strategy} k={k}: "
                        f"{report.mismatches} mismatches, "
                        f"{report.event_violations} event violations "
                        f"({report.first_mismatch})"
                    )
                bin_path = _build_strategy_bin(cc, wd, ensemble, strategy, k, config)
                family = "native" if strategy in NATIVE_FAMILY else "ifelse"
                pair = _measure_pair(
                    base_bin[family], bin_path, str(data_bin),
                    nrows, nfeat, config.reps, passes,
                    alt_bin=base_bin["ifelse"] if strategy in HYBRIDS else None,
                )
                if pair.subject_checksum != base_sum["native"]:
                    raise ValidationError(
                        f"{strategy} k={k} checksum {pair.subject_checksum!r} "
                        f"differs from baseline {base_sum['native']!r}"
                    )
                rows.append(BenchRow(
                    strategy=strategy, k=k, dataset=ds_name,
                    median_ns=pair.subject_median_ns,
                    normalized=pair.normalized,
                    variance=pair.variance,
                    baseline=family,
                    checksum=pair.subject_checksum,
                    normalized_ifelse=pair.alt_normalized,
                ))

    geomeans: dict[tuple[str, str], float] = {}
    by_strategy: dict[str, list[float]] = {}
    for r in rows:
        by_strategy.setdefault(r.strategy, []).append(r.normalized)
    for strategy, values in by_strategy.items():
        geomeans[(strategy, size_class)] = geometric_mean(values)

    return BenchReport(
        rows=tuple(rows),
        geomeans=geomeans,
        size_class=size_class,
        passes=passes,
        reps=config.reps,
        baseline_median_ns=baseline_median,
    )


def sweep(config: BenchConfig) -> str:
    """Plot-ready CSV over the register sweep: one row per
    (strategy, k, dataset), baselines excluded."""
    if not config.registers or not config.strategies:
        return CSV_HEADER + "\n"
    return run_bench(config).to_csv(include_baselines=False)
