"""Dense float64 tensors on disk, plus the batch-manifest format the pipeline shares.

Tensor files are version-1.0 NPY: 6-byte magic, version bytes, a 2-byte
little-endian header length, a Python-literal header dict, then the raw
C-order payload. Only little-endian IEEE floats are accepted (``<f4`` is
widened to ``<f8`` on load), Fortran-ordered files are rejected, and every
value must be finite. The writer pads the header so the payload starts on a
64-byte boundary, which for small headers puts the data at offset 128.
"""

from __future__ import annotations

import ast
import json
import os
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_MAGIC = b"\x93NUMPY"
_VERSION = b"\x01\x00"
_SUPPORTED = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


class TensorFormatError(ValueError):
    """A tensor file violates the on-disk format contract."""


class ManifestError(ValueError):
    """A batch manifest is malformed or references bad tensors."""


def _check_shape(shape: tuple[int, ...], origin: str) -> None:
    if len(shape) == 0:
        raise TensorFormatError(f"{origin}: empty shape is forbidden")
    for axis in shape:
        if not isinstance(axis, int) or axis <= 0:
            raise TensorFormatError(f"{origin}: axis lengths must be positive integers, got {shape}")


def write_tensor(data, path) -> None:
    """Write ``data`` as a float64 NPY v1.0 file; round-trips bit-exactly."""
    arr = np.asarray(data, dtype=np.float64)
    _check_shape(arr.shape, str(path))
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError(f"{path}: refusing to write non-finite values")
    arr = np.ascontiguousarray(arr)
    header = "{'descr': '<f8', 'fortran_order': False, 'shape': %s, }" % (repr(arr.shape),)
    # magic(6) + version(2) + length(2) + header + '\n', padded to 64 bytes
    unpadded = len(_MAGIC) + 2 + 2 + len(header) + 1
    pad = (-unpadded) % 64
    header = header + " " * pad + "\n"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_VERSION)
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("latin1"))
        fh.write(arr.tobytes())


def _read_preamble(fh, origin: str) -> tuple[tuple[int, ...], np.dtype]:
    magic = fh.read(6)
    if magic != _MAGIC:
        raise TensorFormatError(f"{origin}: not a tensor file (bad magic)")
    version = fh.read(2)
    if version != _VERSION:
        raise TensorFormatError(f"{origin}: unsupported format version {version!r}")
    raw_len = fh.read(2)
    if len(raw_len) != 2:
        raise TensorFormatError(f"{origin}: truncated header length")
    (hlen,) = struct.unpack("<H", raw_len)
    raw_header = fh.read(hlen)
    if len(raw_header) != hlen:
        raise TensorFormatError(f"{origin}: truncated header")
    try:
        header = ast.literal_eval(raw_header.decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise TensorFormatError(f"{origin}: malformed header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise TensorFormatError(f"{origin}: header must define descr, fortran_order and shape")
    descr = header["descr"]
    if descr not in _SUPPORTED:
        raise TensorFormatError(f"{origin}: unsupported dtype {descr!r} (need <f8 or <f4)")
    if header["fortran_order"] is not False:
        raise TensorFormatError(f"{origin}: unsupported layout (fortran_order must be False)")
    shape = header["shape"]
    if not isinstance(shape, tuple):
        raise TensorFormatError(f"{origin}: shape must be a tuple, got {shape!r}")
    _check_shape(shape, origin)
    return shape, _SUPPORTED[descr]


def read_header(path) -> tuple[tuple[int, ...], str]:
    """Peek (shape, descr) without loading the payload."""
    with open(path, "rb") as fh:
        shape, dtype = _read_preamble(fh, str(path))
    return shape, dtype.str


def load_tensor(path) -> np.ndarray:
    """Load an NPY v1.0 tensor as a C-order float64 array, validating the contract."""
    with open(path, "rb") as fh:
        shape, dtype = _read_preamble(fh, str(path))
        payload = fh.read()
    count = int(np.prod(shape))
    expected = count * dtype.itemsize
    if len(payload) < expected:
        raise TensorFormatError(f"{path}: payload truncated ({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise TensorFormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    arr = np.frombuffer(payload, dtype=dtype, count=count).reshape(shape)
    arr = arr.astype(np.float64, copy=True)  # widens <f4, copies out of the read-only buffer
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError(f"{path}: tensor contains NaN or Inf")
    return arr


def flatten_batch(arr) -> np.ndarray:
    """Collapse every axis after the first: row i is sample i's flattened features."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim < 2:
        raise ValueError(f"flatten_batch needs rank >= 2, got rank {a.ndim}")
    return np.ascontiguousarray(a).reshape(a.shape[0], -1)


@dataclass(frozen=True)
class ManifestEntry:
    acts: Path
    grads: Path | None = None
    labels: Path | None = None


@dataclass(frozen=True)
class BatchManifest:
    layer: str
    entries: tuple[ManifestEntry, ...]
    path: Path

    @property
    def batch_sizes(self) -> tuple[int, ...]:
        return tuple(read_header(e.acts)[0][0] for e in self.entries)


def _entry_path(value, base: Path, origin: str, key: str) -> Path | None:
    if value is None:
        return None
    if not isinstance(value, str):
        raise ManifestError(f"{origin}: entry field {key!r} must be a string path or null")
    p = (base / value).resolve()
    if not p.is_file():
        raise ManifestError(f"{origin}: referenced file does not exist: {value}")
    return p


def load_manifest(path) -> BatchManifest:
    """Load and validate a batch manifest (JSON, paths relative to the manifest)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("layer"), str):
        raise ManifestError(f"{path}: manifest must be an object with a string 'layer'")
    raw_entries = doc.get("entries")
    if not isinstance(raw_entries, list) or len(raw_entries) == 0:
        raise ManifestError(f"{path}: 'entries' must be a non-empty list")
    base = path.parent
    entries = []
    sample_shape = None
    for i, raw in enumerate(raw_entries):
        origin = f"{path} entry {i}"
        if not isinstance(raw, dict) or "acts" not in raw:
            raise ManifestError(f"{origin}: each entry needs at least an 'acts' path")
        acts = _entry_path(raw["acts"], base, origin, "acts")
        grads = _entry_path(raw.get("grads"), base, origin, "grads")
        labels = _entry_path(raw.get("labels"), base, origin, "labels")
        acts_shape, _ = read_header(acts)
        if len(acts_shape) < 2:
            raise ManifestError(f"{origin}: acts must have a batch axis plus features")
        n = acts_shape[0]
        if sample_shape is None:
            sample_shape = acts_shape[1:]
        elif acts_shape[1:] != sample_shape:
            raise ManifestError(
                f"{origin}: per-sample shape {acts_shape[1:]} differs from {sample_shape}"
            )
        if grads is not None:
            grads_shape, _ = read_header(grads)
            if grads_shape != acts_shape:
                raise ManifestError(f"{origin}: grads shape {grads_shape} != acts shape {acts_shape}")
        if labels is not None:
            labels_shape, _ = read_header(labels)
            if labels_shape != (n,):
                raise ManifestError(f"{origin}: labels shape {labels_shape} != ({n},)")
        if n < 4:
            warnings.warn(
                f"{origin}: batch size {n} < 4; U-centered statistics will reject this entry",
                stacklevel=2,
            )
        entries.append(ManifestEntry(acts=acts, grads=grads, labels=labels))
    return BatchManifest(layer=doc["layer"], entries=tuple(entries), path=path)


def write_manifest(layer: str, entries, path) -> None:
    """Write a manifest whose entry paths are stored relative to the manifest file."""
    path = Path(path)
    base = path.parent

    def rel(p):
        return None if p is None else os.path.relpath(Path(p).resolve(), base.resolve())

    doc = {
        "layer": layer,
        "entries": [
            {"acts": rel(e.acts), "grads": rel(e.grads), "labels": rel(e.labels)}
            for e in entries
        ],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
