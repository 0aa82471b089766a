"""UniCAM saliency: unique-feature energy, its hand-derived gradient, CAM assembly.

The engine compares two activation batches relationally. Each batch is
flattened per sample, turned into a smoothed pairwise-distance matrix,
U-centered, and the base component is projected out of the student
component. The squared Frobenius energy of what remains measures feature
knowledge the student holds that the base does not. The gradient of that
energy with respect to the student activations, aggregated per channel,
reweights an otherwise standard class-gradient CAM; with uniform channel
weights the output is bitwise Grad-CAM.

The backward pass is written as explicit adjoints (no autodiff):
``dE/dX_u = 2 X_u``, the projection adjoint collapses to the identity on
the student channel because ``<X_u, P_b> = 0`` (asserted, not assumed),
then the U-centering adjoint and finally the smoothed-distance adjoint
``dD_ij/dx_i = (x_i - x_j) / D_ij``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import distcorr
from .tensorio import flatten_batch, load_tensor

DISTILLED = "distilled"
RESIDUAL = "residual"

DEFAULT_EPS = 1e-9


@dataclass(frozen=True)
class ActivationBundle:
    """One batch of activations at a named layer, with optional extras.

    acts: (n, C, H, W); grads: class-score gradients of the same shape;
    labels: per-sample integral class ids stored as floats.
    """

    layer: str
    acts: np.ndarray
    grads: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.acts.ndim != 4:
            raise ValueError(f"bundle acts must be (n, C, H, W), got rank {self.acts.ndim}")
        if self.grads is not None and self.grads.shape != self.acts.shape:
            raise ValueError(
                f"bundle grads shape {self.grads.shape} != acts shape {self.acts.shape}"
            )
        if self.labels is not None:
            if self.labels.shape != (self.acts.shape[0],):
                raise ValueError(
                    f"bundle labels shape {self.labels.shape} != ({self.acts.shape[0]},)"
                )
            if np.any(self.labels < 0) or np.any(self.labels != np.floor(self.labels)):
                raise ValueError("bundle labels must be non-negative integral values")

    @property
    def batch_size(self) -> int:
        return self.acts.shape[0]


def load_bundle(entry, layer: str) -> ActivationBundle:
    """Materialize a manifest entry into an ActivationBundle."""
    acts = load_tensor(entry.acts)
    grads = load_tensor(entry.grads) if entry.grads is not None else None
    labels = load_tensor(entry.labels) if entry.labels is not None else None
    return ActivationBundle(layer=layer, acts=acts, grads=grads, labels=labels)


@dataclass(frozen=True)
class Heatmap:
    """A batch of non-negative saliency maps; ``normalized`` means per-sample max is 0 or 1."""

    maps: np.ndarray
    normalized: bool

    def __post_init__(self):
        if self.maps.ndim != 3:
            raise ValueError(f"heatmaps must be (n, H, W), got rank {self.maps.ndim}")
        if np.any(self.maps < 0):
            raise ValueError("heatmaps must be non-negative")

    def __len__(self) -> int:
        return self.maps.shape[0]

    def select(self, index: int) -> "Heatmap":
        """Single-map view (keeps the normalized flag)."""
        return Heatmap(maps=self.maps[index : index + 1], normalized=self.normalized)


@dataclass(frozen=True)
class UniqueDecomposition:
    """Intermediates of one unique-energy run, mostly for inspection and tests."""

    x_unique: np.ndarray  # (n, n) U-centered residual matrix
    c_coef: float
    energy: np.ndarray  # (n,) per-sample energies, sum = total E
    chan_uniq: np.ndarray  # (n, C) channel uniqueness in [0, 1]
    grad: np.ndarray  # dE/d(acts), same shape as the differentiated acts


def unique_matrix(p_s, p_b):
    """Residual of ``p_s`` after projecting out ``p_b``; returns (matrix, coefficient).

    The coefficient is ``<p_s,p_b>/<p_b,p_b>`` (0 when ``<p_b,p_b>`` is 0,
    in which case the residual is ``p_s`` unchanged). Identical inputs give
    an exactly zero matrix with coefficient 1.
    """
    a = np.asarray(p_s, dtype=np.float64)
    b = np.asarray(p_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"p_s and p_b must have the same shape ({a.shape} != {b.shape})")
    qq = distcorr.hilbert_inner(b, b)
    if qq <= 0.0:
        return a.copy(), 0.0
    c = distcorr.hilbert_inner(a, b) / qq
    return a - c * b, float(c)


def _ucenter_adjoint(g):
    """Adjoint of :func:`kdlens.distcorr.u_center` as a linear map.

    The diagonal of ``g`` is ignored (the forward zeroes it); the result's
    diagonal is meaningless downstream because the distance diagonal is a
    constant 0.
    """
    n = g.shape[0]
    gz = g.copy()
    np.fill_diagonal(gz, 0.0)
    row = gz.sum(axis=1, keepdims=True)
    col = gz.sum(axis=0, keepdims=True)
    return gz - col / (n - 2) - row / (n - 2) + gz.sum() / ((n - 1) * (n - 2))


def _distance_adjoint(gd, x, d):
    """Pull a distance-matrix gradient back to the sample matrix ``x``.

    Requires strictly positive off-diagonal distances (guaranteed by the
    smoothing term), so duplicate samples stay differentiable.
    """
    w = gd + gd.T
    np.fill_diagonal(w, 0.0)
    safe = d.copy()
    np.fill_diagonal(safe, 1.0)
    w = w / safe
    return w.sum(axis=1, keepdims=True) * x - w @ x


def unique_energy_with_grad(a_s, a_b, eps=DEFAULT_EPS):
    """Unique-feature energy of ``a_s`` relative to ``a_b`` and its gradient.

    Returns ``(E, e, g)``: total energy, per-sample energies (n,), and
    ``dE/da_s`` with the shape of ``a_s``. ``eps`` (> 0) smooths both
    distance matrices so the chain stays differentiable at coincident
    samples; identical inputs therefore give exactly E = 0 and g = 0.
    """
    a_s = np.asarray(a_s, dtype=np.float64)
    a_b = np.asarray(a_b, dtype=np.float64)
    if eps <= 0:
        raise ValueError(f"eps must be > 0 for the differentiable path, got {eps}")
    xs = flatten_batch(a_s)
    xb = flatten_batch(a_b)
    n = xs.shape[0]
    if xb.shape[0] != n:
        raise ValueError(f"student and base batch sizes differ ({n} != {xb.shape[0]})")
    if n < 4:
        raise ValueError(f"unique energy requires n >= 4, got n = {n}")

    ds = distcorr.pairwise_distance(xs, eps)
    db = distcorr.pairwise_distance(xb, eps)
    ps = distcorr.u_center(ds)
    pb = distcorr.u_center(db)
    xu, _c = unique_matrix(ps, pb)

    # the dropped projection term is exactly the component along pb
    residual = abs(distcorr.hilbert_inner(xu, pb))
    bound = 1e-10 * distcorr.hilbert_norm(ps) * distcorr.hilbert_norm(pb)
    assert residual <= max(bound, 1e-300), (
        f"projection residual {residual} exceeds orthogonality bound {bound}"
    )

    e = (xu * xu).sum(axis=1)
    energy = float(e.sum())

    g_p = 2.0 * xu
    g_d = _ucenter_adjoint(g_p)
    # dD_ii/dx = 0 (the diagonal is pinned to 0), handled inside the adjoint
    grad_flat = _distance_adjoint(g_d, xs, ds)
    if not (np.isfinite(energy) and np.all(np.isfinite(grad_flat))):
        raise ValueError("non-finite intermediate in the unique-energy computation")
    return energy, e, grad_flat.reshape(a_s.shape)


def channel_uniqueness(g):
    """Per-channel share of the energy gradient, normalized per sample.

    Aggregates ``|g|`` over the spatial axes and divides each sample's row
    by its max; an all-zero row stays all-zero, so the per-sample max is
    0 or 1.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 4:
        raise ValueError(f"gradient must be (n, C, H, W), got rank {g.ndim}")
    u = np.abs(g).sum(axis=(2, 3))
    peak = u.max(axis=1, keepdims=True)
    return np.divide(u, peak, out=np.zeros_like(u), where=peak > 0)


def cam_assemble(acts, grads, chan_uniq=None):
    """Weighted-channel class activation map.

    Channel weights are the spatial means of ``grads`` (class-score
    gradients), optionally modulated by ``chan_uniq``; the weighted sum of
    activation channels is rectified at 0. ``chan_uniq=None`` is exactly
    the uniform-weights (Grad-CAM) case.
    """
    acts = np.asarray(acts, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if acts.ndim != 4:
        raise ValueError(f"acts must be (n, C, H, W), got rank {acts.ndim}")
    if grads.shape != acts.shape:
        raise ValueError(f"grads shape {grads.shape} != acts shape {acts.shape}")
    beta = grads.mean(axis=(2, 3))
    if chan_uniq is not None:
        chan_uniq = np.asarray(chan_uniq, dtype=np.float64)
        if chan_uniq.shape != beta.shape:
            raise ValueError(f"chan_uniq shape {chan_uniq.shape} != (n, C) {beta.shape}")
        beta = beta * chan_uniq
    maps = np.einsum("nc,nchw->nhw", beta, acts)
    return Heatmap(maps=np.maximum(maps, 0.0), normalized=False)


def gradcam(bundle: ActivationBundle) -> Heatmap:
    """Plain class-gradient CAM (uniform channel uniqueness)."""
    if bundle.grads is None:
        raise ValueError(f"layer {bundle.layer!r}: gradcam needs class-score gradients")
    return cam_assemble(bundle.acts, bundle.grads)


def decompose(a_s, a_b, eps=DEFAULT_EPS) -> UniqueDecomposition:
    """Full unique-feature decomposition of ``a_s`` against ``a_b``."""
    a_s = np.asarray(a_s, dtype=np.float64)
    a_b = np.asarray(a_b, dtype=np.float64)
    xs = flatten_batch(a_s)
    xb = flatten_batch(a_b)
    if xs.shape[0] != xb.shape[0]:
        raise ValueError("student and base batch sizes differ")
    if xs.shape[0] < 4:
        raise ValueError(f"unique decomposition requires n >= 4, got n = {xs.shape[0]}")
    ps = distcorr.u_center(distcorr.pairwise_distance(xs, eps))
    pb = distcorr.u_center(distcorr.pairwise_distance(xb, eps))
    xu, c = unique_matrix(ps, pb)
    _, e, g = unique_energy_with_grad(a_s, a_b, eps)
    return UniqueDecomposition(
        x_unique=xu, c_coef=c, energy=e, chan_uniq=channel_uniqueness(g), grad=g
    )


def unicam(student: ActivationBundle, base: ActivationBundle, mode=DISTILLED, eps=DEFAULT_EPS):
    """Uniqueness-weighted CAM for one batch pair.

    ``distilled`` maps knowledge unique to the student; ``residual`` swaps
    the roles and maps what the base kept to itself. The mapped side must
    carry class-score gradients.
    """
    if mode not in (DISTILLED, RESIDUAL):
        raise ValueError(f"mode must be {DISTILLED!r} or {RESIDUAL!r}, got {mode!r}")
    if student.batch_size != base.batch_size:
        raise ValueError(
            f"student batch {student.batch_size} != base batch {base.batch_size}"
        )
    mapped, other = (student, base) if mode == DISTILLED else (base, student)
    if mapped.grads is None:
        raise ValueError(f"{mode} mode needs class-score gradients on the mapped bundle")
    _, _, g = unique_energy_with_grad(mapped.acts, other.acts, eps)
    return cam_assemble(mapped.acts, mapped.grads, channel_uniqueness(g))


def _resize_bilinear(maps, out_h, out_w):
    n, h, w = maps.shape
    rows = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    cols = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    r0 = np.floor(rows).astype(np.intp)
    c0 = np.floor(cols).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[None, :, None]
    fc = (cols - c0)[None, None, :]
    top = maps[:, r0[:, None], c0[None, :]] * (1 - fc) + maps[:, r0[:, None], c1[None, :]] * fc
    bot = maps[:, r1[:, None], c0[None, :]] * (1 - fc) + maps[:, r1[:, None], c1[None, :]] * fc
    return top * (1 - fr) + bot * fr


def postprocess(heat: Heatmap, out_h: int, out_w: int) -> Heatmap:
    """Corner-aligned bilinear resize, then per-sample min-max to [0, 1].

    A constant map (max == min) comes out all-zero. Resizing a normalized
    map to its own size is the identity, so the operation is idempotent.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got ({out_h}, {out_w})")
    maps = _resize_bilinear(heat.maps, int(out_h), int(out_w))
    mn = maps.min(axis=(1, 2), keepdims=True)
    mx = maps.max(axis=(1, 2), keepdims=True)
    span = mx - mn
    out = np.divide(maps - mn, span, out=np.zeros_like(maps), where=span > 0)
    return Heatmap(maps=out, normalized=True)
