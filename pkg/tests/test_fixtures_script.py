"""Smoke tests for scripts/fetch_uci.py in offline (synthetic) mode."""

import subprocess
import sys
from pathlib import Path

SCRIPT = Path(__file__).resolve().parent.parent / "scripts" / "fetch_uci.py"


def run_script(*args):
    return subprocess.run(
        [sys.executable, str(SCRIPT), *args], capture_output=True, text=True
    )


def test_synthetic_fixtures(tmp_path):
    proc = run_script(
        "spambase", "letter", "--synthetic", "--out", str(tmp_path),
        "--max-rows", "200", "--seed", "3",
    )
    assert proc.returncode == 0, proc.stderr
    for name, nfeat in (("spambase", 57), ("letter", 16)):
        full = (tmp_path / f"{name}.csv").read_text().splitlines()
        feats = (tmp_path / f"{name}.features.csv").read_text().splitlines()
        assert len(full) == 201 and len(feats) == 200
        assert full[0].split(",") == [f"f{i}" for i in range(nfeat)] + ["label"]
        for line in feats[:20]:
            cells = line.split(",")
            assert len(cells) == nfeat
            [float(c) for c in cells]

    before = (tmp_path / "letter.csv").read_bytes()
    again = run_script(
        "spambase", "letter", "--synthetic", "--out", str(tmp_path),
        "--max-rows", "200", "--seed", "3",
    )
    assert again.returncode == 0
    assert (tmp_path / "letter.csv").read_bytes() == before


def test_unknown_dataset_rejected(tmp_path):
    proc = run_script("not-a-dataset", "--synthetic", "--out", str(tmp_path))
    assert proc.returncode == 1
    assert "unknown dataset" in proc.stderr
