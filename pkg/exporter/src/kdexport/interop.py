"""Writers for the on-disk exchange formats.

Tensors go out through np.save, which already emits the strict profile the
analysis toolkit reads (NPY v1.0, little-endian floats, C order). Manifests
are JSON whose entry paths are stored relative to the manifest file, so a
whole export directory can be moved as a unit.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np


def save_tensor(arr, path):
    """Write a float32/float64 tensor; non-finite values never leave the process."""
    a = np.asarray(arr)
    if a.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        a = a.astype(np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{path}: refusing to export non-finite values")
    np.save(path, np.ascontiguousarray(a))


def write_manifest(layer, entries, path):
    """Write a batch manifest; entries are dicts with 'acts' and optional 'grads'/'labels'."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        return None if p is None else os.path.relpath(Path(p).resolve(), base)

    doc = {
        "layer": layer,
        "entries": [
            {"acts": rel(e["acts"]), "grads": rel(e.get("grads")), "labels": rel(e.get("labels"))}
            for e in entries
        ],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_sidecar(path, doc):
    """Metadata JSON with sorted keys, so re-exports are byte-comparable."""
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def versions():
    """Library versions that pin an export, recorded in every sidecar."""
    import torch
    import torchvision

    from . import __version__

    return {
        "kdexport": __version__,
        "numpy": np.__version__,
        "torch": torch.__version__,
        "torchvision": torchvision.__version__,
    }
