"""Exporter command line: argument wiring and exit codes."""

import json
import subprocess
import sys

import numpy as np
import pytest

from kdexport.cli import main


def test_export_features_prints_manifests(tmp_path, checkpoint, dataset_dir, capsys):
    rc = main(
        [
            "export-features",
            "--checkpoint", str(checkpoint),
            "--arch", "resnet18",
            "--dataset", str(dataset_dir),
            "--batch-size", "4",
            "--layers", "L4",
            "--out", str(tmp_path),
        ]
    )
    assert rc == 0
    assert capsys.readouterr().out.splitlines() == [str(tmp_path / "L4.json")]
    assert (tmp_path / "L4.json").is_file()


def test_export_embeddings_offline(tmp_path, capsys):
    rc = main(
        [
            "export-embeddings",
            "--classes", "cat", "dog",
            "--out", str(tmp_path),
            "--offline",
            "--seed", "3",
            "--dim", "16",
        ]
    )
    assert rc == 0
    path = capsys.readouterr().out.strip()
    assert np.load(path).shape == (2, 16)


def test_export_perturbed(tmp_path, checkpoint, dataset_dir, capsys):
    heat = tmp_path / "heat.npy"
    np.save(heat, np.ones((8, 64, 64)))
    rc = main(
        [
            "export-perturbed",
            "--checkpoint", str(checkpoint),
            "--arch", "resnet18",
            "--dataset", str(dataset_dir),
            "--heatmaps", str(heat),
            "--batch-size", "4",
            "--out", str(tmp_path / "out"),
        ]
    )
    assert rc == 0
    assert capsys.readouterr().out.strip() == str(tmp_path / "out" / "features.json")
    assert json.loads((tmp_path / "out" / "features.json").read_text())["layer"] == "features"


def test_bad_input_exits_two(tmp_path, checkpoint, dataset_dir, capsys):
    rc = main(
        [
            "export-features",
            "--checkpoint", str(checkpoint),
            "--arch", "resnet18",
            "--dataset", str(dataset_dir),
            "--batch-size", "3",
            "--out", str(tmp_path),
        ]
    )
    assert rc == 2
    assert capsys.readouterr().err.startswith("error: batch_size must be >= 4")


def test_missing_checkpoint_exits_two(tmp_path, dataset_dir, capsys):
    rc = main(
        [
            "export-features",
            "--checkpoint", str(tmp_path / "nope.pt"),
            "--arch", "resnet18",
            "--dataset", str(dataset_dir),
            "--out", str(tmp_path),
        ]
    )
    assert rc == 2
    assert capsys.readouterr().err.startswith("error:")


def test_unknown_arch_is_an_argparse_error():
    with pytest.raises(SystemExit) as exc:
        main(["export-features", "--checkpoint", "x", "--arch", "vgg", "--dataset", "y", "--out", "z"])
    assert exc.value.code == 2


def test_module_entrypoint_help():
    proc = subprocess.run(
        [sys.executable, "-m", "kdexport.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    for command in ("export-features", "export-embeddings", "export-perturbed"):
        assert command in proc.stdout
