"""End-to-end acceptance checks against the analysis toolkit.

Every interaction with the analysis side goes through files and its CLI as
a subprocess; nothing in this package imports it. Each test covers one
advertised guarantee and prints a single PASS line.
"""

import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np

from kdexport import ExportSpec, export_embeddings, export_features

REPO_ROOT = Path(__file__).resolve().parents[2]


def _ok(capsys, line):
    with capsys.disabled():
        print(f"\n[ACCEPT] {line}")


def run_core(*argv):
    exe = shutil.which("kdlens")
    cmd = [exe, *map(str, argv)] if exe else [sys.executable, "-m", "kdlens.cli", *map(str, argv)]
    return subprocess.run(cmd, capture_output=True, text=True)


def test_core_loads_exported_features(export_dir, tmp_path, capsys):
    manifest = export_dir["manifests"]["L4"]
    out = tmp_path / "fss.json"
    proc = run_core("fss", "--student", manifest, "--base", manifest, "--layer", "L4", "--out", out)
    assert proc.returncode == 0, proc.stderr
    report = json.loads(out.read_text())
    assert abs(report["mean"] - 1.0) <= 1e-12  # a representation matches itself
    assert report["degenerate_batches"] == []
    _ok(capsys, f"exported manifests load and score in the analysis CLI (self-FSS {report['mean']})")


def test_same_checkpoint_twice_has_no_signal(export_dir, tmp_path, checkpoint, dataset_dir, capsys):
    again = export_features(
        ExportSpec(
            checkpoint=str(checkpoint),
            arch="resnet18",
            dataset=str(dataset_dir),
            out_dir=str(tmp_path / "again"),
            layers=("L1", "L4"),
            batch_size=4,
        )
    )
    maps = tmp_path / "maps.npy"
    rep = tmp_path / "rep.json"
    proc = run_core(
        "unicam",
        "--student", export_dir["manifests"]["L4"],
        "--base", again["L4"],
        "--mode", "distilled",
        "--out", maps,
        "--report", rep,
    )
    assert proc.returncode == 0, proc.stderr
    arr = np.load(maps)
    assert arr.shape == (8, 2, 2)
    assert np.all(arr == 0.0)
    assert json.loads(rep.read_text())["energy_per_batch"] == [0, 0]
    _ok(capsys, "two exports of one checkpoint give all-zero saliency maps and zero energy")


def test_exported_table_drives_relevance_run(export_dir, tmp_path, capsys):
    table = export_embeddings(["cat", "dog"], out_dir=tmp_path, offline=True, seed=7)
    out = tmp_path / "rs.json"
    proc = run_core(
        "rs",
        "--features", export_dir["manifests"]["L4"],
        "--table", table,
        "--layer", "L4",
        "--out", out,
    )
    assert proc.returncode == 0, proc.stderr
    report = json.loads(out.read_text())
    assert report["metric"] == "RS"
    assert 0.0 <= report["mean"] <= 1.0
    assert report["degenerate_batches"] == []
    _ok(capsys, f"an exported embedding table drives a relevance run (mean {report['mean']})")


def test_analysis_suite_passes_without_this_package(tmp_path, capsys):
    # meta-path blocker: any attempt to import kdexport inside the analysis
    # suite fails, proving the primary package stands alone
    plugin = tmp_path / "kdexport_blocker.py"
    plugin.write_text(
        "import sys\n"
        "\n"
        "class _Blocker:\n"
        "    def find_spec(self, name, path=None, target=None):\n"
        '        if name == "kdexport" or name.startswith("kdexport."):\n'
        '            raise ImportError("the analysis suite must not need kdexport")\n'
        "        return None\n"
        "\n"
        "sys.meta_path.insert(0, _Blocker())\n"
    )
    env = dict(os.environ)
    env["PYTHONPATH"] = str(tmp_path)
    env["PYTEST_PLUGINS"] = "kdexport_blocker"
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", str(REPO_ROOT / "tests"), "-q", "-p", "no:cacheprovider"],
        capture_output=True,
        text=True,
        cwd=REPO_ROOT,
        env=env,
        timeout=600,
    )
    assert proc.returncode == 0, proc.stdout[-2000:] + proc.stderr[-2000:]
    summary = [l for l in proc.stdout.splitlines() if "passed" in l][-1].strip()
    _ok(capsys, f"the analysis suite passes with this package unimportable ({summary})")
