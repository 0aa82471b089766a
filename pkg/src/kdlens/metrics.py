"""Knowledge-transfer metrics: saliency-masked perturbation, FSS and RS reports.

FSS averages the squared distance correlation between student and base
feature batches; RS does the same between features and ground-truth rows
gathered from a class-embedding table. Both report per-batch values, the
arithmetic mean, and which batches hit the zero-variance branch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import distcorr
from .jsonutil import canonical_dumps
from .saliency import Heatmap
from .tensorio import load_tensor

VALID_METRICS = ("FSS", "RS", "DCOR", "PDCOR")


@dataclass(frozen=True)
class EmbeddingTable:
    """Ground-truth class embeddings, one row per class id."""

    rows: np.ndarray

    def __post_init__(self):
        if self.rows.ndim != 2:
            raise ValueError(f"embedding table must be 2-D, got rank {self.rows.ndim}")
        if self.rows.shape[0] < 2:
            raise ValueError(f"embedding table needs >= 2 classes, got {self.rows.shape[0]}")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("embedding table contains non-finite values")
        uniq = np.unique(self.rows, axis=0)
        if uniq.shape[0] < self.rows.shape[0]:
            warnings.warn("embedding table has duplicate rows", stacklevel=2)

    @property
    def num_classes(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        return cls(rows=load_tensor(path))

    def gather(self, labels) -> np.ndarray:
        """Row-gather by integral labels; errors on out-of-range ids."""
        lab = np.asarray(labels, dtype=np.float64)
        if lab.ndim != 1:
            raise ValueError(f"labels must be 1-D, got rank {lab.ndim}")
        if np.any(lab != np.floor(lab)) or np.any(lab < 0):
            raise ValueError("labels must be non-negative integral values")
        idx = lab.astype(np.intp)
        if np.any(idx >= self.num_classes):
            raise ValueError(
                f"label {int(idx.max())} out of range for {self.num_classes} classes"
            )
        return self.rows[idx]


@dataclass(frozen=True)
class MetricReport:
    metric: str
    layer: str
    per_batch: tuple[float, ...]
    mean: float
    degenerate_batches: tuple[int, ...] = ()
    manifest_digests: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric not in VALID_METRICS:
            raise ValueError(f"metric must be one of {VALID_METRICS}, got {self.metric!r}")

    def to_dict(self) -> dict:
        doc = {
            "metric": self.metric,
            "layer": self.layer,
            "per_batch": list(self.per_batch),
            "mean": self.mean,
            "degenerate_batches": list(self.degenerate_batches),
            "manifest_digests": list(self.manifest_digests),
        }
        doc.update(self.extra)
        return doc

    def to_json(self) -> str:
        return canonical_dumps(self.to_dict())


def perturb(image, heat: Heatmap, index: int = 0) -> np.ndarray:
    """Mask one image with a normalized saliency map, broadcast over channels.

    ``out = image * heat``; an all-ones map returns the image unchanged,
    an all-zero map blacks it out.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"image must be (c, h, w), got rank {img.ndim}")
    if not isinstance(heat, Heatmap):
        raise ValueError("heat must be a Heatmap")
    if not heat.normalized:
        raise ValueError("perturb requires a normalized heatmap (post-process it first)")
    m = heat.maps[index]
    if m.shape != img.shape[1:]:
        raise ValueError(f"heatmap size {m.shape} != image spatial size {img.shape[1:]}")
    return img * m[None, :, :]


def perturb_batch(images, heats: Heatmap) -> np.ndarray:
    """Vectorized :func:`perturb` over a batch."""
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim != 4:
        raise ValueError(f"images must be (n, c, h, w), got rank {imgs.ndim}")
    if not isinstance(heats, Heatmap) or not heats.normalized:
        raise ValueError("perturb requires a normalized Heatmap")
    if len(heats) != imgs.shape[0]:
        raise ValueError(f"{len(heats)} heatmaps for {imgs.shape[0]} images")
    if heats.maps.shape[1:] != imgs.shape[2:]:
        raise ValueError(
            f"heatmap size {heats.maps.shape[1:]} != image spatial size {imgs.shape[2:]}"
        )
    return imgs * heats.maps[:, None, :, :]


def extract_features(feature_fn, images, heats: Heatmap) -> np.ndarray:
    """Features of saliency-masked images; ``feature_fn`` maps (n,c,h,w) -> (n,d)."""
    if feature_fn is None:
        raise ValueError("no feature extractor available and no precomputed features given")
    masked = perturb_batch(images, heats)
    feats = np.asarray(feature_fn(masked), dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != masked.shape[0]:
        raise ValueError(f"feature extractor returned shape {feats.shape}, expected (n, d)")
    return feats


def _feature_batches(batches, name):
    out = []
    for j, b in enumerate(batches):
        a = np.asarray(b, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"{name} batch {j} must be 2-D (n, d), got rank {a.ndim}")
        if a.shape[0] < 2:
            raise ValueError(f"{name} batch {j} needs >= 2 samples, got {a.shape[0]}")
        out.append(a)
    if not out:
        raise ValueError(f"{name}: need at least one batch")
    return out


def _report(metric, values, flags, layer, manifest_digests, extra):
    mean = float(sum(values) / len(values))
    return MetricReport(
        metric=metric,
        layer=layer,
        per_batch=tuple(values),
        mean=mean,
        degenerate_batches=tuple(i for i, f in enumerate(flags) if f),
        manifest_digests=tuple(manifest_digests),
        extra=dict(extra or {}),
    )


def fss(student_feats, base_feats, layer="", manifest_digests=(), extra=None) -> MetricReport:
    """Feature similarity: mean squared distance correlation across batch pairs."""
    s = _feature_batches(student_feats, "student")
    b = _feature_batches(base_feats, "base")
    if len(s) != len(b):
        raise ValueError(f"student has {len(s)} batches, base has {len(b)}")
    values, flags = [], []
    for j, (sj, bj) in enumerate(zip(s, b)):
        if sj.shape[0] != bj.shape[0]:
            raise ValueError(
                f"batch {j}: student n {sj.shape[0]} != base n {bj.shape[0]}"
            )
        v, degenerate = distcorr.dcor_checked(sj, bj)
        values.append(v)
        flags.append(degenerate)
    return _report("FSS", values, flags, layer, manifest_digests, extra)


def rs(feats, labels, table: EmbeddingTable, layer="", manifest_digests=(), extra=None) -> MetricReport:
    """Relevance: mean squared distance correlation between features and label embeddings.

    A single-class batch gathers identical rows, hits the zero-variance
    branch, scores 0, and is flagged degenerate.
    """
    f = _feature_batches(feats, "features")
    if len(labels) != len(f):
        raise ValueError(f"{len(f)} feature batches but {len(labels)} label batches")
    values, flags = [], []
    for j, (fj, lj) in enumerate(zip(f, labels)):
        gt = table.gather(lj)
        if gt.shape[0] != fj.shape[0]:
            raise ValueError(f"batch {j}: {fj.shape[0]} samples but {gt.shape[0]} labels")
        v, degenerate = distcorr.dcor_checked(fj, gt)
        values.append(v)
        flags.append(degenerate)
    return _report("RS", values, flags, layer, manifest_digests, extra)
