"""Anomaly scores: Mahalanobis distance and the adaptive cosine estimator (ACE).

ACE measures the cosine between the background-whitened displacement
``x - mu_b`` and the whitened target signature ``s``:

    D_ace = s' Sinv (x - mu) / (sqrt(s' Sinv s) * sqrt((x - mu)' Sinv (x - mu)))

It is computed either directly from the inverse covariance or, equivalently,
as a dot product of unit vectors after whitening with ``W`` (``W cov W' = I``).
Scores are oriented so that higher means more anomalous.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, EmptySignatureError, NumericError
from .features import EmbeddingVolume
from .gaussian import GaussianField, WhitenField

DETECTORS = ("ace", "mahalanobis")
SIGNATURE_MODES = ("global", "per_location")

_NEG_TOL = 1e-9


@dataclass(frozen=True)
class ScoreValue:
    value: float
    detector: str
    degenerate: bool = False


@dataclass(frozen=True)
class TargetSignature:
    """Anomaly-class representative: a d-vector or an H' x W' x d tensor."""

    mode: str
    vector: np.ndarray
    source_count: int

    def __post_init__(self):
        if self.mode not in SIGNATURE_MODES:
            raise ValueError(f"unknown signature mode {self.mode!r}")
        if self.source_count < 1:
            raise EmptySignatureError("a signature needs at least one source patch")
        if not np.all(np.isfinite(self.vector)):
            raise NumericError("signature has non-finite entries")

    def per_location(self, grid: tuple[int, int]) -> np.ndarray:
        """Signature broadcast to H' x W' x d."""
        v = np.asarray(self.vector, dtype=np.float64)
        if self.mode == "global":
            return np.broadcast_to(v, grid + v.shape)
        if v.shape[:2] != tuple(grid):
            raise ConfigurationError(f"signature grid {v.shape[:2]} does not match model grid {grid}")
        return v


@dataclass(frozen=True)
class PatchScoreMap:
    scores: np.ndarray  # H' x W' float32
    detector: str
    image_id: str = ""
    degenerate_count: int = 0

    @property
    def grid(self) -> tuple[int, int]:
        return self.scores.shape


def build_target_signature(
    anomalous: Sequence[EmbeddingVolume | np.ndarray],
    masks: Optional[Sequence[np.ndarray]] = None,
    mode: str = "global",
) -> TargetSignature:
    """Average anomalous patch embeddings into a target signature.

    With ``masks`` (binary H' x W' grids) only mask-positive cells count.
    In ``per_location`` mode each cell averages over images; cells with no
    positive sample fall back to the global mean.
    """
    if mode not in SIGNATURE_MODES:
        raise ValueError(f"unknown signature mode {mode!r}; expected one of {SIGNATURE_MODES}")
    if len(anomalous) == 0:
        raise EmptySignatureError("no anomalous embeddings given")
    vols = np.stack([np.asarray(a.data if isinstance(a, EmbeddingVolume) else a) for a in anomalous])
    vols = vols.astype(np.float64).transpose(0, 2, 3, 1)  # N x H x W x d
    n, h, w, d = vols.shape
    if masks is None:
        weight = np.ones((n, h, w))
    else:
        if len(masks) != n:
            raise ValueError(f"{len(masks)} masks for {n} embeddings")
        weight = np.stack([np.asarray(m) for m in masks]).astype(bool).astype(np.float64)
        if weight.shape != (n, h, w):
            raise ValueError(f"masks must be {h}x{w} grids, got {weight.shape[1:]}")
    count = int(weight.sum())
    if count == 0:
        raise EmptySignatureError("masks select no patch embeddings")
    global_mean = np.einsum("nhw,nhwd->d", weight, vols) / count
    if mode == "global":
        return TargetSignature("global", global_mean, count)
    cell_counts = weight.sum(axis=0)
    sums = np.einsum("nhw,nhwd->hwd", weight, vols)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_cell = sums / cell_counts[..., None]
    per_cell = np.where(cell_counts[..., None] > 0, per_cell, global_mean)
    return TargetSignature("per_location", per_cell, count)


def _quad(v: np.ndarray, m: np.ndarray) -> float:
    return float(v @ m @ v)


def mahalanobis_score(x, mu, cov_inverse) -> ScoreValue:
    """``sqrt((x - mu)' Sinv (x - mu))``; tiny negative round-off clamps to 0."""
    delta = np.asarray(x, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    q = _quad(delta, np.asarray(cov_inverse, dtype=np.float64))
    if q < -_NEG_TOL:
        raise NumericError(f"negative Mahalanobis quadratic form {q}")
    return ScoreValue(float(np.sqrt(max(q, 0.0))), "mahalanobis")


def ace_score(x, s, mu_b, cov_inverse_b) -> ScoreValue:
    """ACE statistic evaluated directly from the inverse background covariance."""
    s = np.asarray(s, dtype=np.float64)
    if not np.any(s):
        raise ValueError("target signature must be non-zero")
    sinv = np.asarray(cov_inverse_b, dtype=np.float64)
    delta = np.asarray(x, dtype=np.float64) - np.asarray(mu_b, dtype=np.float64)
    ss = _quad(s, sinv)
    if not ss > 0:
        raise NumericError(f"s' Sinv s = {ss} is not positive")
    xx = _quad(delta, sinv)
    if not xx > 0:
        return ScoreValue(0.0, "ace", degenerate=True)
    value = float(s @ sinv @ delta) / (np.sqrt(ss) * np.sqrt(xx))
    return ScoreValue(float(np.clip(value, -1.0, 1.0)), "ace")


def whiten_signature(s, whitener) -> np.ndarray:
    """Unit-norm whitened signature ``W s / ||W s||``."""
    ws = np.asarray(whitener, dtype=np.float64) @ np.asarray(s, dtype=np.float64)
    norm = np.linalg.norm(ws)
    if norm == 0:
        raise ValueError("whitened target signature is zero")
    return ws / norm


def ace_score_whitened(x, s_whitened_unit, whitener, mu_b) -> ScoreValue:
    """ACE as ``s_hat . x_hat / ||x_hat||`` with ``x_hat = W (x - mu_b)``."""
    xh = np.asarray(whitener, dtype=np.float64) @ (
        np.asarray(x, dtype=np.float64) - np.asarray(mu_b, dtype=np.float64)
    )
    norm = np.linalg.norm(xh)
    if norm == 0:
        return ScoreValue(0.0, "ace", degenerate=True)
    value = float(np.asarray(s_whitened_unit, dtype=np.float64) @ (xh / norm))
    return ScoreValue(float(np.clip(value, -1.0, 1.0)), "ace")


def _unit(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norm = np.linalg.norm(v, axis=-1)
    safe = np.where(norm > 0, norm, 1.0)
    return v / safe[..., None], norm


def score_volume(
    vol: EmbeddingVolume | np.ndarray,
    field: GaussianField,
    whiten: WhitenField,
    sig: Optional[TargetSignature] = None,
    detector: str = "ace",
    method: str = "whitened",
    image_id: str = "",
) -> PatchScoreMap:
    """Score every patch of ``vol`` against the background field.

    ``method="direct"`` evaluates ACE from the inverse covariance instead of
    the whitening transforms; both agree to round-off.
    """
    if detector not in DETECTORS:
        raise ValueError(f"unknown detector {detector!r}; expected one of {DETECTORS}")
    data = np.asarray(vol.data if isinstance(vol, EmbeddingVolume) else vol, dtype=np.float64)
    if data.shape != (field.d,) + field.grid:
        raise ValueError(f"volume shape {data.shape} does not match model {(field.d,) + field.grid}")
    delta = data.transpose(1, 2, 0) - np.asarray(field.means, dtype=np.float64)
    if detector == "ace" and sig is None:
        raise ConfigurationError("the ACE detector needs a target signature; build one first")

    if method == "whitened":
        xh = whiten.apply(delta)
        if detector == "mahalanobis":
            scores = np.linalg.norm(xh, axis=-1)
            degenerate = 0
        else:
            s = sig.per_location(field.grid)
            if whiten.cov_type == "isotropic":
                # cosine is invariant to the scalar whitening; skipping it makes
                # maps bit-identical across isotropic aggregations
                sh, s_norm = _unit(np.asarray(s, dtype=np.float64))
                xu, x_norm = _unit(delta)
            else:
                sh, s_norm = _unit(whiten.apply(s))
                xu, x_norm = _unit(xh)
            if np.any(s_norm == 0):
                raise ValueError("whitened target signature is zero at some location")
            scores = np.clip(np.einsum("hwd,hwd->hw", sh, xu), -1.0, 1.0)
            dead = x_norm == 0
            scores[dead] = 0.0
            degenerate = int(dead.sum())
    elif method == "direct":
        sinv = field.inverse_covariance()
        q = np.einsum("hwi,hwij,hwj->hw", delta, sinv, delta)
        if np.any(q < -_NEG_TOL):
            raise NumericError("negative Mahalanobis quadratic form")
        q = np.maximum(q, 0.0)
        if detector == "mahalanobis":
            scores = np.sqrt(q)
            degenerate = 0
        else:
            s = sig.per_location(field.grid)
            if not np.any(s):
                raise ValueError("target signature must be non-zero")
            ss = np.einsum("hwi,hwij,hwj->hw", s, sinv, s)
            num = np.einsum("hwi,hwij,hwj->hw", s, sinv, delta)
            dead = q <= 0
            with np.errstate(invalid="ignore", divide="ignore"):
                scores = num / (np.sqrt(ss) * np.sqrt(q))
            scores = np.clip(np.where(dead, 0.0, scores), -1.0, 1.0)
            degenerate = int(dead.sum())
    else:
        raise ValueError(f"unknown scoring method {method!r}")
    return PatchScoreMap(scores.astype(np.float32), detector, image_id, degenerate)
