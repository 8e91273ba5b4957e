"""Per-location Gaussian background model and whitening transforms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericError
from .features import EmbeddingVolume

COV_TYPES = ("full", "diagonal", "isotropic")
AGGREGATIONS = ("mean_diagonal", "mean_full", "determinant", "trace")
DEFAULT_EPSILON = 0.01


@dataclass(frozen=True)
class GaussianField:
    """Background statistics on an H' x W' grid.

    ``covariance`` is H' x W' x d x d for ``full``, H' x W' x d (variances)
    for ``diagonal`` and H' x W' (the scalar variance) for ``isotropic``.
    All covariances already include the ``epsilon`` ridge.
    """

    means: np.ndarray
    cov_type: str
    covariance: np.ndarray
    epsilon: float
    sample_count: int
    aggregation: str = "mean_diagonal"

    @property
    def grid(self) -> tuple[int, int]:
        return self.means.shape[0], self.means.shape[1]

    @property
    def d(self) -> int:
        return self.means.shape[2]

    def full_covariance(self) -> np.ndarray:
        """Covariance expanded to H' x W' x d x d whatever the storage type."""
        d = self.d
        if self.cov_type == "full":
            return self.covariance
        if self.cov_type == "diagonal":
            return self.covariance[..., :, None] * np.eye(d)
        return self.covariance[..., None, None] * np.eye(d)

    def inverse_covariance(self) -> np.ndarray:
        cov = np.asarray(self.full_covariance(), dtype=np.float64)
        if self.cov_type == "full":
            return np.linalg.inv(cov)
        d = self.d
        if self.cov_type == "diagonal":
            return (1.0 / self.covariance.astype(np.float64))[..., :, None] * np.eye(d)
        return (1.0 / self.covariance.astype(np.float64))[..., None, None] * np.eye(d)


@dataclass(frozen=True)
class WhitenField:
    """Per-location whitening ``W`` with ``W @ cov @ W.T == I``.

    Stored compactly: H' x W' x d x d for ``full``, the diagonal of ``W``
    (H' x W' x d) for ``diagonal`` and its scalar (H' x W') for ``isotropic``.
    """

    cov_type: str
    transforms: np.ndarray

    def matrices(self) -> np.ndarray:
        t = np.asarray(self.transforms, dtype=np.float64)
        if self.cov_type == "full":
            return t
        if self.cov_type == "diagonal":
            return t[..., :, None] * np.eye(t.shape[-1])
        raise ValueError("isotropic whitening has no explicit d; use apply()")

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Whiten vectors ``v`` of shape H' x W' x ... x d location by location."""
        t = np.asarray(self.transforms, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        extra = v.ndim - 3
        if self.cov_type == "full":
            t = t.reshape(t.shape[:2] + (1,) * extra + t.shape[2:])
            return np.einsum("...ij,...j->...i", t, v)
        if self.cov_type == "diagonal":
            return t.reshape(t.shape[:2] + (1,) * extra + t.shape[2:]) * v
        return t.reshape(t.shape + (1,) * (extra + 1)) * v


def _stack(embeddings: Sequence[EmbeddingVolume | np.ndarray]) -> np.ndarray:
    if len(embeddings) == 0:
        raise ValueError("need at least one embedding volume")
    arrays = [np.asarray(e.data if isinstance(e, EmbeddingVolume) else e) for e in embeddings]
    shape = arrays[0].shape
    if len(shape) != 3:
        raise ValueError(f"embedding volumes must be d x H' x W', got {shape}")
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"embedding shapes differ: {shape} vs {a.shape}")
    return np.stack(arrays).astype(np.float64)


def make_isotropic(cov_full: np.ndarray, aggregation: str = "mean_diagonal", epsilon: float = DEFAULT_EPSILON):
    """Collapse full covariance(s) (``... x d x d``) to an isotropic variance.

    ``mean_diagonal`` is the average variance, ``mean_full`` the mean of all
    d*d entries, ``determinant`` and ``trace`` their closed forms.  The
    result is floored at ``epsilon``.
    """
    cov = np.asarray(cov_full, dtype=np.float64)
    d = cov.shape[-1]
    if aggregation == "mean_diagonal":
        var = np.trace(cov, axis1=-2, axis2=-1) / d
    elif aggregation == "mean_full":
        var = cov.mean(axis=(-2, -1))
    elif aggregation == "determinant":
        with np.errstate(over="ignore", under="ignore"):
            var = np.linalg.det(cov)
    elif aggregation == "trace":
        var = np.trace(cov, axis1=-2, axis2=-1)
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}; expected one of {AGGREGATIONS}")
    if not np.all(np.isfinite(var)):
        raise NumericError(f"isotropic {aggregation} aggregation produced a non-finite value")
    var = np.maximum(var, epsilon)
    if np.any(var <= 0):
        raise NumericError("isotropic variance is not positive after flooring")
    return float(var) if np.ndim(var) == 0 else var


def fit_gaussians(
    embeddings: Sequence[EmbeddingVolume | np.ndarray],
    cov_type: str = "full",
    epsilon: float = DEFAULT_EPSILON,
    aggregation: str = "mean_diagonal",
) -> GaussianField:
    """Fit one Gaussian per grid location from N normal-image embeddings.

    The covariance is the unbiased sample covariance (zero when N == 1) plus
    ``epsilon * I``, reduced to its diagonal or an isotropic variance when
    requested.
    """
    if cov_type not in COV_TYPES:
        raise ValueError(f"unknown covariance type {cov_type!r}; expected one of {COV_TYPES}")
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {aggregation!r}; expected one of {AGGREGATIONS}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    x = _stack(embeddings)  # N x d x H x W
    n, d, h, w = x.shape
    x = np.ascontiguousarray(x.transpose(2, 3, 0, 1))  # H x W x N x d
    means = x.mean(axis=2)
    centered = x - means[:, :, None, :]
    if n > 1:
        scatter = np.matmul(centered.transpose(0, 1, 3, 2), centered) / (n - 1)
    else:
        scatter = np.zeros((h, w, d, d))
    # exact symmetry: fl(a + b) == fl(b + a)
    cov = 0.5 * (scatter + scatter.transpose(0, 1, 3, 2)) + epsilon * np.eye(d)
    if cov_type == "diagonal":
        cov = np.diagonal(cov, axis1=-2, axis2=-1).copy()
    elif cov_type == "isotropic":
        cov = make_isotropic(cov, aggregation, epsilon)
    return GaussianField(means, cov_type, cov, float(epsilon), n, aggregation)


def whitening_matrix(cov: np.ndarray, floor: float) -> np.ndarray:
    """``W = D^-1/2 U^T`` from the eigendecomposition ``cov = U D U^T``.

    Eigenvalues below ``floor`` are clamped to ``floor`` first.
    """
    vals, vecs = np.linalg.eigh(np.asarray(cov, dtype=np.float64))
    vals = np.maximum(vals, floor)
    return np.swapaxes(vecs / np.sqrt(vals)[..., None, :], -1, -2)


def precompute_whitening(field: GaussianField) -> WhitenField:
    """Whitening transforms for every location of ``field``."""
    eps = field.epsilon
    if field.cov_type == "diagonal":
        return WhitenField("diagonal", 1.0 / np.sqrt(np.maximum(field.covariance, eps)))
    if field.cov_type == "isotropic":
        return WhitenField("isotropic", 1.0 / np.sqrt(np.maximum(field.covariance, eps)))
    cov = np.asarray(field.covariance, dtype=np.float64)
    try:
        w = whitening_matrix(cov, eps)
    except np.linalg.LinAlgError:
        w = None
    if w is None or not np.all(np.isfinite(w)):
        h, wd = field.grid
        for i in range(h):
            for j in range(wd):
                try:
                    wij = whitening_matrix(cov[i, j], eps)
                except np.linalg.LinAlgError as exc:
                    raise NumericError(f"eigendecomposition failed at location ({i}, {j})") from exc
                if not np.all(np.isfinite(wij)):
                    raise NumericError(f"non-finite whitening transform at location ({i}, {j})")
        raise NumericError("eigendecomposition failed")
    return WhitenField("full", w)
