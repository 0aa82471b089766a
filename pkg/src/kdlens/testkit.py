"""Deterministic verification toys: a portable PRNG, finite differences, a
closed-form conv net with manual adjoints, and synthetic student/base fixtures.

Everything here exists to check the production pipeline from an independent
angle, and to generate byte-reproducible fixtures. Nothing in this module is
meant for real workloads.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import saliency
from .jsonutil import canonical_dumps
from .metrics import EmbeddingTable
from .saliency import ActivationBundle
from .tensorio import ManifestEntry, write_manifest, write_tensor

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """64-bit SplitMix generator; constants are part of the fixture contract.

    state += 0x9E3779B97F4A7C15, then two xor-shift-multiply mixes
    (0xBF58476D1CE4E5B9 with shift 30, 0x94D049BB133111EB with shift 27)
    and a final shift by 31. ``uniform`` uses the top 53 bits, so streams
    are bit-identical on any platform with IEEE doubles.
    """

    GAMMA = 0x9E3779B97F4A7C15
    MIX1 = 0xBF58476D1CE4E5B9
    MIX2 = 0x94D049BB133111EB

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + self.GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * self.MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * self.MIX2) & _MASK64
        return z ^ (z >> 31)

    def uniform(self, lo=0.0, hi=1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0**-53)

    def uniforms(self, shape, lo=0.0, hi=1.0) -> np.ndarray:
        flat = [self.uniform(lo, hi) for _ in range(int(np.prod(shape)))]
        return np.array(flat, dtype=np.float64).reshape(shape)

    def integer(self, lo: int, hi: int) -> int:
        """Uniform-ish integer in [lo, hi) via modulo; fine for fixture jitter."""
        if hi <= lo:
            raise ValueError("integer() needs hi > lo")
        return lo + self.next_u64() % (hi - lo)


def finite_diff(fn, point, coords, step=1e-5):
    """Central-difference estimates of d(fn)/d(point) at flat indices ``coords``.

    ``fn`` takes the (temporarily perturbed) array and returns a scalar; it
    must not mutate its argument. Raises on non-finite evaluations.
    """
    base = np.array(point, dtype=np.float64)
    flat = base.ravel()
    out = np.empty(len(coords), dtype=np.float64)
    for k, idx in enumerate(coords):
        orig = flat[idx]
        flat[idx] = orig + step
        fp = float(fn(base))
        flat[idx] = orig - step
        fm = float(fn(base))
        flat[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite evaluation while probing coordinate {idx}")
        out[k] = (fp - fm) / (2.0 * step)
    return out


def _conv3(x, w, bias=None):
    # 3x3 cross-correlation, zero padding 1, stride 1: (n,c,h,w) -> (n,o,h,w)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    out = np.einsum("ncpquv,ocuv->nopq", win, w)
    if bias is not None:
        out = out + bias[None, :, None, None]
    return out


def _conv3_adjoint_input(gz, w):
    # adjoint of _conv3 w.r.t. its input: correlate with the flipped, transposed kernel
    w_adj = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return _conv3(gz, w_adj)


def _conv3_adjoint_weight(gz, x):
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    return np.einsum("ncpquv,nopq->ocuv", win, gz)


class ToyNet:
    """Two 3x3 conv layers (ReLU), global average pooling, linear head.

    Forward and backward are closed-form numpy; ``class_score_grads``
    returns the gradients of the summed true-class scores with respect to
    the input, both activations, and every weight, which makes the whole
    thing finite-difference checkable.
    """

    def __init__(self, conv1_w, conv1_b, conv2_w, conv2_b, head_w, head_b):
        self.conv1_w = np.asarray(conv1_w, dtype=np.float64)
        self.conv1_b = np.asarray(conv1_b, dtype=np.float64)
        self.conv2_w = np.asarray(conv2_w, dtype=np.float64)
        self.conv2_b = np.asarray(conv2_b, dtype=np.float64)
        self.head_w = np.asarray(head_w, dtype=np.float64)
        self.head_b = np.asarray(head_b, dtype=np.float64)
        if self.conv1_w.shape[2:] != (3, 3) or self.conv2_w.shape[2:] != (3, 3):
            raise ValueError("conv kernels must be 3x3")
        if self.conv2_w.shape[1] != self.conv1_w.shape[0]:
            raise ValueError("conv2 input channels must match conv1 output channels")
        if self.head_w.shape[1] != self.conv2_w.shape[0]:
            raise ValueError("head width must match conv2 output channels")

    @classmethod
    def seeded(cls, seed: int, in_channels=1, num_classes=2):
        rng = SplitMix64(seed)
        c1, c2 = 4, 8
        s1 = 1.0 / np.sqrt(9.0 * in_channels)
        s2 = 1.0 / np.sqrt(9.0 * c1)
        return cls(
            conv1_w=rng.uniforms((c1, in_channels, 3, 3), -s1, s1),
            conv1_b=rng.uniforms((c1,), -0.05, 0.05),
            conv2_w=rng.uniforms((c2, c1, 3, 3), -s2, s2),
            conv2_b=rng.uniforms((c2,), -0.05, 0.05),
            head_w=rng.uniforms((num_classes, c2), -0.5, 0.5),
            head_b=rng.uniforms((num_classes,), -0.05, 0.05),
        )

    def forward(self, images):
        x = np.asarray(images, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.conv1_w.shape[1]:
            raise ValueError(f"images must be (n, {self.conv1_w.shape[1]}, h, w)")
        z1 = _conv3(x, self.conv1_w, self.conv1_b)
        a1 = np.maximum(z1, 0.0)
        z2 = _conv3(a1, self.conv2_w, self.conv2_b)
        a2 = np.maximum(z2, 0.0)
        pooled = a2.mean(axis=(2, 3))
        scores = pooled @ self.head_w.T + self.head_b[None, :]
        return {"x": x, "z1": z1, "a1": a1, "z2": z2, "a2": a2, "pooled": pooled, "scores": scores}

    def scores(self, images):
        return self.forward(images)["scores"]

    def features(self, images):
        """Pooled penultimate features, one row per image."""
        return self.forward(images)["pooled"]

    def class_score_grads(self, images, labels):
        """Gradients of sum_i scores[i, labels_i]; samples stay independent."""
        cache = self.forward(images)
        lab = np.asarray(labels, dtype=np.float64)
        if lab.shape != (cache["x"].shape[0],):
            raise ValueError("labels must be one class id per image")
        if np.any(lab < 0) or np.any(lab != np.floor(lab)) or np.any(lab >= self.head_w.shape[0]):
            raise ValueError("labels must be integral class ids within the head's range")
        idx = lab.astype(np.intp)
        n, _, h, w = cache["x"].shape
        d_pooled = self.head_w[idx]  # (n, c2)
        d_head_w = np.zeros_like(self.head_w)
        np.add.at(d_head_w, idx, cache["pooled"])
        d_head_b = np.zeros_like(self.head_b)
        np.add.at(d_head_b, idx, 1.0)
        d_a2 = np.broadcast_to(d_pooled[:, :, None, None] / (h * w), cache["a2"].shape)
        d_z2 = d_a2 * (cache["z2"] > 0)
        d_a1 = _conv3_adjoint_input(d_z2, self.conv2_w)
        d_z1 = d_a1 * (cache["z1"] > 0)
        return {
            "scores": cache["scores"],
            "a1": cache["a1"],
            "a2": cache["a2"],
            "d_a1": d_a1,
            "d_a2": np.array(d_a2),
            "input": _conv3_adjoint_input(d_z1, self.conv1_w),
            "conv1_w": _conv3_adjoint_weight(d_z1, cache["x"]),
            "conv1_b": d_z1.sum(axis=(0, 2, 3)),
            "conv2_w": _conv3_adjoint_weight(d_z2, cache["a1"]),
            "conv2_b": d_z2.sum(axis=(0, 2, 3)),
            "head_w": d_head_w,
            "head_b": d_head_b,
        }

    def bundle(self, images, labels, layer="C1") -> ActivationBundle:
        """Activations plus true-class score gradients at ``C1`` or ``C2``."""
        if layer not in ("C1", "C2"):
            raise ValueError(f"unknown ToyNet layer {layer!r}")
        g = self.class_score_grads(images, labels)
        acts, grads = (g["a1"], g["d_a1"]) if layer == "C1" else (g["a2"], g["d_a2"])
        return ActivationBundle(
            layer=layer,
            acts=acts,
            grads=grads,
            labels=np.asarray(labels, dtype=np.float64),
        )


_BLOB_KERNEL = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 16.0
_EDGE_KERNEL = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) * 0.5
_HGRAD_KERNEL = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=np.float64) * 0.3


@dataclass(frozen=True)
class FixtureSet:
    seed: int
    images: np.ndarray  # (n, 1, 16, 16)
    labels: np.ndarray  # (n,) integral floats
    region_mask: np.ndarray  # (n, 16, 16) 0/1, marks the planted edge band
    student_bundle: ActivationBundle
    base_bundle: ActivationBundle
    embedding_table: EmbeddingTable
    student_net: ToyNet
    base_net: ToyNet


def gen_fixtures(seed: int, n: int = 8) -> FixtureSet:
    """Synthetic blob-plus-edge images and a student/base net pair.

    The two nets share every weight except conv1 channel 3: zero in the
    base, a vertical-edge kernel in the student. Zeroing that kernel makes
    the nets identical, so the planted unique knowledge is exactly the
    edge band recorded in ``region_mask``. All randomness comes from one
    SplitMix64 stream in a fixed draw order, so outputs are byte-stable.
    """
    if n < 4:
        raise ValueError(f"fixtures need n >= 4, got {n}")
    rng = SplitMix64(seed)
    side = 16
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    images = np.zeros((n, 1, side, side))
    labels = np.array([i % 2 for i in range(n)], dtype=np.float64)
    mask = np.zeros((n, side, side))
    for i in range(n):
        cy = 6.0 + 3.0 * rng.uniform()
        cx = 5.0 + 2.0 * rng.uniform()
        sigma = 1.6 + 0.8 * rng.uniform()
        amp_b = 0.8 + 0.4 * rng.uniform()
        col = rng.integer(10, 13)
        amp_e = 0.45 + 0.25 * rng.uniform() + 0.15 * labels[i]
        blob = amp_b * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
        images[i, 0] = blob
        images[i, 0, :, col:] += amp_e
        mask[i, :, col - 1 : col + 2] = 1.0

    # shared channels avoid vertical-edge selectivity so the planted channel
    # is the only carrier of the edge band's relational structure
    conv1_w = np.zeros((4, 1, 3, 3))
    conv1_w[0, 0] = _BLOB_KERNEL
    conv1_w[1, 0] = _HGRAD_KERNEL + rng.uniforms((3, 3), -0.02, 0.02)
    conv1_w[2, 0] = rng.uniforms((3, 3), 0.02, 0.10)
    # channel 3 is the planted slot: zero in the base, edge-selective in the student
    student_conv1 = conv1_w.copy()
    student_conv1[3, 0] = _EDGE_KERNEL
    conv2_w = rng.uniforms((8, 4, 3, 3), 0.0, 0.12)
    head_w = rng.uniforms((2, 8), 0.2, 1.0)
    zeros4, zeros8, zeros2 = np.zeros(4), np.zeros(8), np.zeros(2)
    base_net = ToyNet(conv1_w, zeros4, conv2_w, zeros8, head_w, zeros2)
    student_net = ToyNet(student_conv1, zeros4, conv2_w, zeros8, head_w, zeros2)

    emb = rng.uniforms((2, 8), -1.0, 1.0)
    emb[0] /= np.linalg.norm(emb[0])
    emb[1] -= (emb[1] @ emb[0]) * emb[0]
    emb[1] /= np.linalg.norm(emb[1])

    return FixtureSet(
        seed=seed,
        images=images,
        labels=labels,
        region_mask=mask,
        student_bundle=student_net.bundle(images, labels, "C1"),
        base_bundle=base_net.bundle(images, labels, "C1"),
        embedding_table=EmbeddingTable(rows=emb),
        student_net=student_net,
        base_net=base_net,
    )


def scenario_fractions(fx: FixtureSet, eps=saliency.DEFAULT_EPS) -> dict:
    """Measured in-mask energy fractions for the three map flavours.

    Fractions are batch-aggregated sums of raw (unnormalized) map mass
    inside ``region_mask`` over total map mass. These are the quantities
    frozen as golden values by the acceptance suite.
    """
    distilled = saliency.unicam(fx.student_bundle, fx.base_bundle, saliency.DISTILLED, eps)
    residual = saliency.unicam(fx.student_bundle, fx.base_bundle, saliency.RESIDUAL, eps)
    baseline = saliency.gradcam(fx.student_bundle)

    def fraction(heat):
        total = float(heat.maps.sum())
        if total == 0.0:
            return 0.0
        return float((heat.maps * fx.region_mask).sum() / total)

    d, g, r = fraction(distilled), fraction(baseline), fraction(residual)
    return {
        "seed": fx.seed,
        "n": int(fx.images.shape[0]),
        "eps": eps,
        "distilled_mask_fraction": d,
        "gradcam_mask_fraction": g,
        "residual_mask_fraction": r,
        "margin_distilled_vs_gradcam": d - g,
        "margin_distilled_vs_residual": d - r,
    }


def write_fixtures(fx: FixtureSet, outdir) -> dict:
    """Write tensors, the two manifests, and the measured-scenario JSON."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "images": out / "images.npy",
        "labels": out / "labels.npy",
        "region_mask": out / "region_mask.npy",
        "embedding_table": out / "embedding_table.npy",
        "student_acts": out / "student_acts.npy",
        "student_grads": out / "student_grads.npy",
        "base_acts": out / "base_acts.npy",
        "base_grads": out / "base_grads.npy",
    }
    write_tensor(fx.images, paths["images"])
    write_tensor(fx.labels, paths["labels"])
    write_tensor(fx.region_mask, paths["region_mask"])
    write_tensor(fx.embedding_table.rows, paths["embedding_table"])
    write_tensor(fx.student_bundle.acts, paths["student_acts"])
    write_tensor(fx.student_bundle.grads, paths["student_grads"])
    write_tensor(fx.base_bundle.acts, paths["base_acts"])
    write_tensor(fx.base_bundle.grads, paths["base_grads"])
    paths["student_manifest"] = out / "student.json"
    paths["base_manifest"] = out / "base.json"
    write_manifest(
        "C1",
        [ManifestEntry(paths["student_acts"], paths["student_grads"], paths["labels"])],
        paths["student_manifest"],
    )
    write_manifest(
        "C1",
        [ManifestEntry(paths["base_acts"], paths["base_grads"], paths["labels"])],
        paths["base_manifest"],
    )
    paths["scenario"] = out / "scenario.json"
    paths["scenario"].write_text(canonical_dumps(scenario_fractions(fx)) + "\n", encoding="utf-8")
    return paths
