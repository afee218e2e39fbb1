#!/usr/bin/env python3
"""Fetch and prepare the benchmark's reference datasets.

For each dataset this writes two files under the output directory:

  <name>.csv            header row f0..fN,label - ready for forestexport
  <name>.features.csv   headerless feature rows - ready for regforest bench

Preparation is minimal: rows with missing values are dropped, the label
column is moved last, and non-numeric columns (including labels such as
letters or income brackets) are replaced by integer codes from a sorted
per-column vocabulary, so the encoding is deterministic.

The benchmark does not depend on these datasets; synthetic data is a
first-class citizen. When the archive is unreachable, --synthetic
generates a seeded surrogate with each dataset's shape so downstream
tooling still has something realistic to chew on.
"""

from __future__ import annotations

import argparse
import gzip
import io
import sys
import urllib.request
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BASE = "https://archive.ics.uci.edu/ml/machine-learning-databases"
TIMEOUT = 60


@dataclass(frozen=True)
class Source:
    url: str
    kind: str = "plain"  # plain | zip | gz
    member: str | None = None  # archive member for zip
    delimiter: str = ","
    skip_header: bool = False
    # constant cell appended to every row, for merging source files that
    # differ in one attribute (wine color)
    extra: str | None = None


@dataclass(frozen=True)
class Dataset:
    sources: tuple[Source, ...]
    label_first: bool = False
    missing: str = "?"
    # surrogate shape for --synthetic: rows, features, classes
    synthetic: tuple[int, int, int] = (10000, 10, 2)


CATALOG: dict[str, Dataset] = {
    "adult": Dataset(
        sources=(Source(f"{BASE}/adult/adult.data"),),
        synthetic=(32561, 14, 2),
    ),
    "bank": Dataset(
        sources=(
            Source(f"{BASE}/00222/bank.zip", kind="zip", member="bank-full.csv",
                   delimiter=";", skip_header=True),
        ),
        synthetic=(45211, 16, 2),
    ),
    "covertype": Dataset(
        sources=(Source(f"{BASE}/covtype/covtype.data.gz", kind="gz"),),
        synthetic=(581012, 54, 7),
    ),
    "letter": Dataset(
        sources=(Source(f"{BASE}/letter-recognition/letter-recognition.data"),),
        label_first=True,
        synthetic=(20000, 16, 26),
    ),
    "magic": Dataset(
        sources=(Source(f"{BASE}/magic/magic04.data"),),
        synthetic=(19020, 10, 2),
    ),
    "satlog": Dataset(
        sources=(
            Source(f"{BASE}/statlog/satimage/sat.trn", delimiter=" "),
            Source(f"{BASE}/statlog/satimage/sat.tst", delimiter=" "),
        ),
        synthetic=(6435, 36, 6),
    ),
    "sensorless-drive": Dataset(
        sources=(Source(f"{BASE}/00325/Sensorless_drive_diagnosis.txt", delimiter=" "),),
        synthetic=(58509, 48, 11),
    ),
    "spambase": Dataset(
        sources=(Source(f"{BASE}/spambase/spambase.data"),),
        synthetic=(4601, 57, 2),
    ),
    "wine-quality": Dataset(
        sources=(
            Source(f"{BASE}/wine-quality/winequality-red.csv", delimiter=";",
                   skip_header=True, extra="0"),
            Source(f"{BASE}/wine-quality/winequality-white.csv", delimiter=";",
                   skip_header=True, extra="1"),
        ),
        synthetic=(6497, 12, 7),
    ),
}


def fetch_bytes(url: str) -> bytes:
    with urllib.request.urlopen(url, timeout=TIMEOUT) as resp:
        return resp.read()


def source_rows(src: Source) -> list[list[str]]:
    raw = fetch_bytes(src.url)
    if src.kind == "gz":
        raw = gzip.decompress(raw)
    elif src.kind == "zip":
        with zipfile.ZipFile(io.BytesIO(raw)) as zf:
            raw = zf.read(src.member)
    text = raw.decode("utf-8", errors="replace")
    rows = []
    for line in text.splitlines():
        line = line.strip().strip('"')
        if not line:
            continue
        cells = [c.strip().strip('"') for c in line.split(src.delimiter) if c.strip()]
        if cells:
            rows.append(cells + ([src.extra] if src.extra is not None else []))
    if src.skip_header:
        rows = rows[1:]
    return rows


def encode_columns(rows: list[list[str]]) -> list[list[str]]:
    """Replace non-numeric columns with sorted-vocabulary integer codes."""
    ncols = len(rows[0])
    out = [list(r) for r in rows]
    for col in range(ncols):
        numeric = True
        for r in rows:
            try:
                float(r[col])
            except ValueError:
                numeric = False
                break
        if numeric:
            continue
        vocab = {v: i for i, v in enumerate(sorted({r[col] for r in rows}))}
        for r in out:
            r[col] = str(vocab[r[col]])
    return out


def prepare(name: str, spec: Dataset, max_rows: int) -> list[list[str]]:
    rows: list[list[str]] = []
    for src in spec.sources:
        rows.extend(source_rows(src))
    width = max(len(r) for r in rows)
    rows = [r for r in rows if len(r) == width and spec.missing not in r]
    if not rows:
        raise ValueError(f"{name}: no usable rows after cleaning")
    if spec.label_first:
        rows = [r[1:] + r[:1] for r in rows]
    if max_rows and len(rows) > max_rows:
        rows = rows[:max_rows]
    return encode_columns(rows)


def synthesize(name: str, spec: Dataset, seed: int, max_rows: int) -> list[list[str]]:
    rows, feats, classes = spec.synthetic
    if max_rows:
        rows = min(rows, max_rows)
    rng = np.random.default_rng([seed, len(name), sum(map(ord, name))])
    X = rng.normal(size=(rows, feats)).astype(np.float32)
    # give the labels some structure so trained trees are not pure noise
    score = X[:, : min(3, feats)].sum(axis=1)
    y = np.clip(
        np.floor((score - score.min()) / (np.ptp(score) + 1e-9) * classes), 0, classes - 1
    ).astype(int)
    return [[format(v, ".8g") for v in row] + [str(lab)] for row, lab in zip(X, y)]


def write_dataset(name: str, rows: list[list[str]], out_dir: Path) -> tuple[Path, Path]:
    nfeat = len(rows[0]) - 1
    full = out_dir / f"{name}.csv"
    feats = out_dir / f"{name}.features.csv"
    header = ",".join([f"f{i}" for i in range(nfeat)] + ["label"])
    with open(full, "w") as fh:
        fh.write(header + "\n")
        for r in rows:
            fh.write(",".join(r) + "\n")
    with open(feats, "w") as fh:
        for r in rows:
            fh.write(",".join(r[:-1]) + "\n")
    return full, feats


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("names", nargs="*", default=[],
                        help=f"datasets to prepare (default: all of {', '.join(CATALOG)})")
    parser.add_argument("--out", default="data/uci", help="output directory")
    parser.add_argument("--synthetic", action="store_true",
                        help="generate seeded surrogates instead of downloading")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-rows", type=int, default=50000,
                        help="row cap per dataset, 0 for no cap")
    args = parser.parse_args(argv)

    names = args.names or list(CATALOG)
    unknown = [n for n in names if n not in CATALOG]
    if unknown:
        print(f"error: unknown dataset(s) {', '.join(unknown)}; "
              f"known: {', '.join(CATALOG)}", file=sys.stderr)
        return 1

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for name in names:
        spec = CATALOG[name]
        try:
            if args.synthetic:
                rows = synthesize(name, spec, args.seed, args.max_rows)
            else:
                rows = prepare(name, spec, args.max_rows)
        except Exception as e:  # network and parse problems both land here
            failures += 1
            print(f"{name}: failed ({e}); rerun with --synthetic for an offline surrogate",
                  file=sys.stderr)
            continue
        full, _ = write_dataset(name, rows, out_dir)
        classes = len({r[-1] for r in rows})
        print(f"{name}: {len(rows)} rows, {len(rows[0]) - 1} features, "
              f"{classes} label values -> {full}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
