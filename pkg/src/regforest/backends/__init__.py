"""Assembly backends: lowering tree programs to x86-64 and AArch64, plus
portable C sources for the two basic implementations."""

from .common import EmittedUnit, emit_to_dir, lower, record_table_asm
from .source import BASELINE_KINDS, baseline_symbol, emit_baseline_source

__all__ = [
    "BASELINE_KINDS",
    "EmittedUnit",
    "baseline_symbol",
    "emit_baseline_source",
    "emit_to_dir",
    "lower",
    "record_table_asm",
]
