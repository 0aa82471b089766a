"""Distance-correlation algebra.

Pairwise Euclidean distance matrices, double- and U-centering, the
U-centered inner-product space, and the (partial) distance correlation
statistics built on top of them. All statistics use exact distances
(no smoothing term); everything runs in float64.

Conventions
-----------
* ``dcor`` returns the squared statistic. Callers that want the
  unsquared value take a square root themselves (the CLI exposes
  ``--sqrt`` for this).
* Zero denominators never raise: ``dcor`` returns 0 when either
  marginal distance variance vanishes, ``project_out`` acts as the
  identity when the direction has zero norm, and ``pdcor2`` returns 0
  when either projected norm vanishes. A residual counts as vanished
  when its norm is at most ``RESIDUAL_RTOL`` times the norm of the
  matrix it was projected from: at small n (4 scalar samples already
  suffice) U-centered distance matrices can be exactly parallel, and
  the analytically-zero residual then carries only roundoff, about
  1e-15 relative, while genuine residuals stay many orders larger.
"""

import numpy as np

# separates roundoff-only residuals (~1e-15 relative) from real ones (>1e-2
# relative in practice); anything near this line is a 0/0 and reported as 0
RESIDUAL_RTOL = 1e-8


def _sample_matrix(x, name="x"):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D (samples x features), got rank {a.ndim}")
    if a.shape[0] < 2:
        raise ValueError(f"{name} needs at least 2 samples, got {a.shape[0]}")
    if a.shape[1] < 1:
        raise ValueError(f"{name} needs at least 1 feature")
    return a


def _same_n(a, b, name_a, name_b):
    if a.shape[0] != b.shape[0]:
        raise ValueError(
            f"{name_a} and {name_b} must have the same number of samples "
            f"({a.shape[0]} != {b.shape[0]})"
        )


def _square(d, name="d"):
    m = np.asarray(d, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    return m


def pairwise_distance(x, eps=0.0):
    """Pairwise Euclidean distances between the rows of ``x``.

    Off-diagonal entries are ``sqrt(||x_i - x_j||^2 + eps)``; the diagonal
    is forced to exactly 0 even when ``eps > 0``. The result is symmetric
    by construction.

    Parameters
    ----------
    x : array, shape (n, d)
    eps : float, >= 0
        Smoothing term added under the square root. Statistics use 0;
        the differentiable saliency path passes a small positive value.
    """
    a = _sample_matrix(x)
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    diff = a[:, None, :] - a[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    d = np.sqrt(sq + eps)
    np.fill_diagonal(d, 0.0)
    return d


def double_center(d):
    """Subtract row and column means and add back the grand mean.

    Every row and column of the result sums to ~0; this is the centering
    used by the squared distance covariance.
    """
    m = _square(d)
    n = m.shape[0]
    row = m.mean(axis=1, keepdims=True)
    col = m.mean(axis=0, keepdims=True)
    return m - row - col + m.sum() / (n * n)


def u_center(d):
    """U-center a distance matrix (n >= 4); the diagonal is defined as 0.

    Off the diagonal the entry is
    ``d_jk - colsum_k/(n-2) - rowsum_j/(n-2) + total/((n-1)(n-2))``.
    For symmetric zero-diagonal input every row and column of the result
    sums to ~0.
    """
    m = _square(d)
    n = m.shape[0]
    if n < 4:
        raise ValueError(f"u_center requires n >= 4, got n = {n}")
    row = m.sum(axis=1, keepdims=True)
    col = m.sum(axis=0, keepdims=True)
    out = m - col / (n - 2) - row / (n - 2) + m.sum() / ((n - 1) * (n - 2))
    np.fill_diagonal(out, 0.0)
    return out


def dcov2(x, y):
    """Squared sample distance covariance of ``x`` and ``y`` (exact distances).

    ``(1/n^2) * sum(A * B)`` with ``A``, ``B`` the double-centered distance
    matrices. Theoretically >= 0 for this estimator; floating point may
    produce values a hair below zero.
    """
    a = _sample_matrix(x, "x")
    b = _sample_matrix(y, "y")
    _same_n(a, b, "x", "y")
    n = a.shape[0]
    ca = double_center(pairwise_distance(a))
    cb = double_center(pairwise_distance(b))
    return float((ca * cb).sum() / (n * n))


def dvar2(x):
    """Squared distance variance: ``dcov2(x, x)``."""
    return dcov2(x, x)


def _dcor_parts(x, y):
    a = _sample_matrix(x, "x")
    b = _sample_matrix(y, "y")
    _same_n(a, b, "x", "y")
    n = a.shape[0]
    ca = double_center(pairwise_distance(a))
    cb = double_center(pairwise_distance(b))
    vxy = float((ca * cb).sum() / (n * n))
    vxx = float((ca * ca).sum() / (n * n))
    vyy = float((cb * cb).sum() / (n * n))
    return vxy, vxx, vyy


def dcor_checked(x, y):
    """Squared distance correlation plus a degeneracy flag.

    Returns ``(value, degenerate)`` where ``degenerate`` is True when the
    zero-variance branch fired (either argument has zero distance
    variance, e.g. it is constant across samples) and the value was
    defined to be exactly 0.
    """
    vxy, vxx, vyy = _dcor_parts(x, y)
    denom = vxx * vyy
    if denom > 0.0:
        return float(vxy / np.sqrt(denom)), False
    return 0.0, True


def dcor(x, y):
    """Squared sample distance correlation in [0, 1].

    ``dcov2(x, y) / sqrt(dvar2(x) * dvar2(y))`` with the zero-variance
    branch returning exactly 0. ``dcor(x, x)`` is 1 for any non-constant
    ``x``. Invariant under translation, orthogonal rotation and positive
    scaling of either argument.
    """
    value, _ = dcor_checked(x, y)
    return value


def hilbert_inner(p, q):
    """Inner product of two U-centered matrices.

    ``(1/(n(n-3))) * sum_{j != k} p_jk * q_jk``; requires n >= 4.
    """
    a = _square(p, "p")
    b = _square(q, "q")
    if a.shape != b.shape:
        raise ValueError(f"p and q must have the same shape ({a.shape} != {b.shape})")
    n = a.shape[0]
    if n < 4:
        raise ValueError(f"hilbert_inner requires n >= 4, got n = {n}")
    total = float((a * b).sum()) - float((np.diagonal(a) * np.diagonal(b)).sum())
    return total / (n * (n - 3))


def hilbert_norm(p):
    """Norm induced by :func:`hilbert_inner` (>= 0)."""
    return float(np.sqrt(max(hilbert_inner(p, p), 0.0)))


def project_out(p, q):
    """Remove from ``p`` its component along ``q`` (U-centered matrices).

    Returns ``p - (<p,q>/<q,q>) * q``; when ``<q,q>`` is 0 the map is the
    identity. The result is orthogonal to ``q``.
    """
    a = _square(p, "p")
    b = _square(q, "q")
    qq = hilbert_inner(b, b)
    if qq <= 0.0:
        return a.copy()
    return a - (hilbert_inner(a, b) / qq) * b


def pdcor2(x, y, z):
    """Squared partial distance correlation of ``x`` and ``y`` given ``z``.

    U-centers the three exact distance matrices, projects the ``z``
    component out of the ``x`` and ``y`` matrices, and returns the cosine
    of the two residuals in the U-centered inner-product space. Signed,
    in [-1, 1]; 0 when either residual vanishes up to roundoff (e.g.
    ``z == y``, or matrices exactly parallel at small n). Requires n >= 4.
    """
    a = _sample_matrix(x, "x")
    b = _sample_matrix(y, "y")
    c = _sample_matrix(z, "z")
    _same_n(a, b, "x", "y")
    _same_n(a, c, "x", "z")
    if a.shape[0] < 4:
        raise ValueError(f"pdcor2 requires n >= 4, got n = {a.shape[0]}")
    pa = u_center(pairwise_distance(a))
    pb = u_center(pairwise_distance(b))
    pc = u_center(pairwise_distance(c))
    ra = project_out(pa, pc)
    rb = project_out(pb, pc)
    na = hilbert_norm(ra)
    nb = hilbert_norm(rb)
    if na <= RESIDUAL_RTOL * hilbert_norm(pa) or nb <= RESIDUAL_RTOL * hilbert_norm(pb):
        return 0.0
    return float(hilbert_inner(ra, rb) / (na * nb))
