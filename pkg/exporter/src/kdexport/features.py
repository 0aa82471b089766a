"""Batch export of activations, class-score gradients, and pooled features.

Output is one manifest per tapped layer plus the NPY tensors it references.
This package never computes saliency or similarity itself; producing files
the analysis CLI can read is the whole job.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import interop, resnets

# smaller batches break U-centered statistics downstream
MIN_BATCH = 4


@dataclass(frozen=True)
class ExportSpec:
    """One export job: which weights, which taps, which images, where to."""

    checkpoint: str
    arch: str
    dataset: str
    out_dir: str
    layers: tuple = resnets.LAYER_NAMES
    batch_size: int = 16
    class_index: int | None = None  # score this class for every sample instead of its label

    def __post_init__(self):
        if self.batch_size < MIN_BATCH:
            raise ValueError(f"batch_size must be >= {MIN_BATCH}, got {self.batch_size}")
        if len(self.layers) == 0:
            raise ValueError("need at least one layer to export")
        for name in self.layers:
            if name not in resnets.LAYER_NAMES:
                raise ValueError(
                    f"unknown layer {name!r}; expected one of {', '.join(resnets.LAYER_NAMES)}"
                )
        if len(set(self.layers)) != len(self.layers):
            raise ValueError("duplicate layer names")


def load_dataset(path):
    """Read images.npy (n, c, h, w) and labels.npy (n,) from a directory."""
    root = Path(path)
    for name in ("images.npy", "labels.npy"):
        if not (root / name).is_file():
            raise ValueError(f"dataset directory {root} is missing {name}")
    images = np.load(root / "images.npy")
    labels = np.load(root / "labels.npy")
    if images.ndim != 4:
        raise ValueError(f"images must be (n, c, h, w), got shape {images.shape}")
    if not np.all(np.isfinite(images)):
        raise ValueError("images contain non-finite values")
    lab = np.asarray(labels, dtype=np.float64)
    if lab.shape != (images.shape[0],):
        raise ValueError(f"labels shape {lab.shape} does not match {images.shape[0]} images")
    if not np.all(np.isfinite(lab)) or np.any(lab != np.floor(lab)) or np.any(lab < 0):
        raise ValueError("labels must be non-negative integral values")
    return np.ascontiguousarray(images, dtype=np.float32), lab


def plan_batches(n, batch_size):
    """Consecutive [lo, hi) chunks; a short tail below the batch floor is an error."""
    if n < MIN_BATCH:
        raise ValueError(f"need at least {MIN_BATCH} samples, got {n}")
    spans = [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]
    lo, hi = spans[-1]
    if hi - lo < MIN_BATCH:
        raise ValueError(
            f"trailing batch of {hi - lo} samples (< {MIN_BATCH}); "
            f"adjust batch_size {batch_size} for {n} samples"
        )
    return spans


def _prepare(spec):
    model = resnets.load_model(spec.arch, spec.checkpoint)
    num_classes = model.fc.out_features
    if spec.class_index is not None and not 0 <= spec.class_index < num_classes:
        raise ValueError(f"class_index {spec.class_index} out of range for {num_classes} classes")
    images, labels = load_dataset(spec.dataset)
    if labels.size and int(labels.max()) >= num_classes:
        raise ValueError(f"label {int(labels.max())} out of range for {num_classes} classes")
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return model, images, labels, out


def _run_sidecar(out, spec, model, command, extra=None):
    root = Path(spec.dataset)
    doc = {
        "arch": spec.arch,
        "batch_size": spec.batch_size,
        "checkpoint": interop.sha256_file(spec.checkpoint),
        "class_index": spec.class_index,
        "command": command,
        "dataset": {
            "images": interop.sha256_file(root / "images.npy"),
            "labels": interop.sha256_file(root / "labels.npy"),
        },
        "layers": list(spec.layers),
        "num_classes": model.fc.out_features,
        "versions": interop.versions(),
    }
    if extra:
        doc.update(extra)
    interop.write_sidecar(out / "export_metadata.json", doc)


def export_features(spec):
    """Run the checkpoint over the dataset and write acts/grads/labels per layer.

    Gradients are of the summed per-sample class score (each sample's own
    label, or spec.class_index for everyone) with respect to each tapped
    activation. Batches are processed sequentially in dataset order.
    Returns {layer: manifest path}.
    """
    model, images, labels, out = _prepare(spec)
    entries = {layer: [] for layer in spec.layers}
    for j, (lo, hi) in enumerate(plan_batches(len(images), spec.batch_size)):
        x = torch.from_numpy(images[lo:hi])
        if spec.class_index is None:
            picked = torch.from_numpy(labels[lo:hi]).long()
        else:
            picked = torch.full((hi - lo,), spec.class_index, dtype=torch.long)
        with resnets.ActivationTap(model, spec.layers) as tap:
            scores = model(x)
            acts = [tap.acts[layer] for layer in spec.layers]
            grads = torch.autograd.grad(scores[torch.arange(hi - lo), picked].sum(), acts)
        for layer, act, grad in zip(spec.layers, acts, grads):
            paths = {
                "acts": out / f"{layer}_batch{j:04d}_acts.npy",
                "grads": out / f"{layer}_batch{j:04d}_grads.npy",
                "labels": out / f"{layer}_batch{j:04d}_labels.npy",
            }
            interop.save_tensor(act.detach().numpy(), paths["acts"])
            interop.save_tensor(grad.detach().numpy(), paths["grads"])
            interop.save_tensor(labels[lo:hi], paths["labels"])
            entries[layer].append(paths)
    manifests = {}
    for layer in spec.layers:
        manifests[layer] = out / f"{layer}.json"
        interop.write_manifest(layer, entries[layer], manifests[layer])
    _run_sidecar(out, spec, model, "export-features")
    return manifests


def _pooled_features(model, x):
    """Global-average-pooled penultimate activations, one row per sample."""
    acts = {}

    def keep(module, inputs, output):
        acts["pool"] = output

    handle = model.avgpool.register_forward_hook(keep)
    try:
        with torch.no_grad():
            model(x)
    finally:
        handle.remove()
    return torch.flatten(acts["pool"], 1)


def export_perturbed_features(spec, heatmaps_path):
    """Mask the images with per-sample heatmaps and export pooled features.

    The masked image is image * heat broadcast over channels, so heatmaps
    must already be normalized to [0, 1] and match the image grid exactly.
    Returns the manifest path.
    """
    model, images, labels, out = _prepare(spec)
    try:
        heat = np.load(heatmaps_path)
    except ValueError as exc:
        raise ValueError(f"{heatmaps_path}: not a loadable NPY file: {exc}") from exc
    if heat.ndim != 3:
        raise ValueError(f"heatmaps must be (n, h, w), got shape {heat.shape}")
    if heat.shape[0] != images.shape[0]:
        raise ValueError(f"{heat.shape[0]} heatmaps for {images.shape[0]} images")
    if heat.shape[1:] != images.shape[2:]:
        raise ValueError(f"heatmap size {heat.shape[1:]} does not match image size {images.shape[2:]}")
    if not np.all(np.isfinite(heat)) or heat.min() < 0.0 or heat.max() > 1.0:
        raise ValueError("heatmaps must lie in [0, 1]; normalize before masking")
    masked = images * heat[:, None, :, :].astype(np.float32)
    entries = []
    for j, (lo, hi) in enumerate(plan_batches(len(images), spec.batch_size)):
        feats = _pooled_features(model, torch.from_numpy(masked[lo:hi]))
        paths = {
            "acts": out / f"features_batch{j:04d}_acts.npy",
            "labels": out / f"features_batch{j:04d}_labels.npy",
        }
        interop.save_tensor(feats.numpy(), paths["acts"])
        interop.save_tensor(labels[lo:hi], paths["labels"])
        entries.append(paths)
    manifest = out / "features.json"
    interop.write_manifest("features", entries, manifest)
    _run_sidecar(
        out,
        spec,
        model,
        "export-perturbed",
        extra={"heatmaps": interop.sha256_file(heatmaps_path), "layers": ["features"]},
    )
    return manifest
