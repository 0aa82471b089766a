"""Class-name embedding tables, one row per class.

Online, each class name is encoded with a sentence-transformers model in
eval mode, so the same names and model id always give the same table. When
that stack or its weights are unreachable, an offline fallback writes a
seeded random table with exactly orthonormal rows instead; the filename
carries an OFFLINE flag so the placebo cannot be mistaken for real language
embeddings.
"""

from pathlib import Path

import numpy as np

from . import interop

DEFAULT_ENCODER = "sentence-transformers/all-MiniLM-L6-v2"
ONLINE_NAME = "label_embeddings.npy"
OFFLINE_NAME = "label_embeddings.OFFLINE.npy"


class EncoderUnavailable(RuntimeError):
    """The sentence encoder could not be imported, fetched, or run."""


def _check_names(class_names):
    names = list(class_names)
    if len(names) < 2:
        raise ValueError(f"need >= 2 class names, got {len(names)}")
    for name in names:
        if not isinstance(name, str) or not name.strip():
            raise ValueError("class names must be non-empty strings")
    if len(set(names)) != len(names):
        raise ValueError("duplicate class names")
    return names


def offline_table(num_classes, dim, seed):
    """Seeded random table with orthonormal rows (QR of a Gaussian)."""
    if dim < num_classes:
        raise ValueError(f"dim {dim} < {num_classes} classes; orthonormal rows are impossible")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, num_classes)))
    q = q * np.sign(np.diag(r))  # pin the sign convention so the table is unique
    return np.ascontiguousarray(q.T)


def _encode(names, model_id):
    try:
        from sentence_transformers import SentenceTransformer
    except Exception as exc:
        raise EncoderUnavailable(
            f"sentence-transformers is not importable ({exc}); "
            "install it or pass --offline for a seeded orthonormal table"
        ) from exc
    try:
        model = SentenceTransformer(model_id)
        model.eval()
        rows = model.encode(list(names), convert_to_numpy=True, show_progress_bar=False)
    except Exception as exc:
        raise EncoderUnavailable(
            f"could not load or run encoder {model_id!r} ({exc}); "
            "check connectivity and the model id, or pass --offline for a seeded orthonormal table"
        ) from exc
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[0] != len(names):
        raise EncoderUnavailable(
            f"encoder {model_id!r} returned shape {rows.shape} for {len(names)} names"
        )
    return rows


def _st_version():
    # metadata lookup, not an import: the sidecar only needs the version string
    try:
        from importlib.metadata import version

        return version("sentence-transformers")
    except Exception:
        return None


def export_embeddings(class_names, model_id=DEFAULT_ENCODER, out_dir=".", offline=False, seed=0, dim=768):
    """Write one embedding row per class name; returns the table path.

    Raises EncoderUnavailable (pointing at the offline fallback) when the
    online path cannot run.
    """
    names = _check_names(class_names)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if offline:
        rows = offline_table(len(names), dim, seed)
        path = out / OFFLINE_NAME
        encoder = {"mode": "offline", "seed": seed}
    else:
        rows = _encode(names, model_id)
        path = out / ONLINE_NAME
        encoder = {"id": model_id, "mode": "online"}
    interop.save_tensor(np.asarray(rows, dtype=np.float64), path)
    versions = interop.versions()
    versions["sentence_transformers"] = _st_version()
    interop.write_sidecar(
        Path(str(path) + ".meta.json"),
        {
            "class_names": names,
            "dim": int(rows.shape[1]),
            "encoder": encoder,
            "versions": versions,
        },
    )
    return path
