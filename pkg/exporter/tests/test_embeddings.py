"""Embedding tables: offline fallback, determinism, failure messaging."""

import json

import numpy as np
import pytest

from kdexport import EncoderUnavailable, export_embeddings, offline_table


def test_offline_rows_are_orthonormal():
    rows = offline_table(5, 64, seed=3)
    gram = rows @ rows.T
    assert np.max(np.abs(gram - np.eye(5))) < 1e-10


def test_offline_export_flags_filename(tmp_path):
    path = export_embeddings(["cat", "dog"], out_dir=tmp_path, offline=True)
    assert "OFFLINE" in path.name
    rows = np.load(path)
    assert rows.shape == (2, 768) and rows.dtype == np.float64


def test_offline_export_is_deterministic(tmp_path):
    a = export_embeddings(["cat", "dog", "owl"], out_dir=tmp_path / "a", offline=True, seed=5)
    b = export_embeddings(["cat", "dog", "owl"], out_dir=tmp_path / "b", offline=True, seed=5)
    assert a.read_bytes() == b.read_bytes()


def test_offline_seed_changes_table(tmp_path):
    a = export_embeddings(["cat", "dog"], out_dir=tmp_path / "a", offline=True, seed=1)
    b = export_embeddings(["cat", "dog"], out_dir=tmp_path / "b", offline=True, seed=2)
    assert a.read_bytes() != b.read_bytes()


def test_sidecar_records_encoder_mode(tmp_path):
    path = export_embeddings(["cat", "dog"], out_dir=tmp_path, offline=True, seed=9, dim=32)
    meta = json.loads((tmp_path / (path.name + ".meta.json")).read_text())
    assert meta["encoder"] == {"mode": "offline", "seed": 9}
    assert meta["class_names"] == ["cat", "dog"]
    assert meta["dim"] == 32
    assert "kdexport" in meta["versions"]


def test_offline_needs_enough_dims():
    with pytest.raises(ValueError, match="orthonormal rows are impossible"):
        offline_table(10, 4, seed=0)


def test_class_name_validation(tmp_path):
    with pytest.raises(ValueError, match="need >= 2"):
        export_embeddings(["solo"], out_dir=tmp_path, offline=True)
    with pytest.raises(ValueError, match="duplicate"):
        export_embeddings(["cat", "cat"], out_dir=tmp_path, offline=True)
    with pytest.raises(ValueError, match="non-empty"):
        export_embeddings(["cat", "  "], out_dir=tmp_path, offline=True)


def test_unreachable_encoder_points_at_fallback(tmp_path, monkeypatch):
    # forced-offline hub: the online path must fail with advice, not hang
    monkeypatch.setenv("HF_HUB_OFFLINE", "1")
    monkeypatch.setenv("TRANSFORMERS_OFFLINE", "1")
    with pytest.raises(EncoderUnavailable, match="--offline"):
        export_embeddings(["cat", "dog"], model_id="kdexport-test/does-not-exist", out_dir=tmp_path)
