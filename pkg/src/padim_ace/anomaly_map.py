"""Full-resolution anomaly maps from patch score grids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .detectors import PatchScoreMap

DEFAULT_SIGMA = 4.0


@dataclass(frozen=True)
class AnomalyMap:
    pixels: np.ndarray  # H x W float32
    image_score: float
    smoothing_sigma: float
    degenerate: bool = False


def _bilinear_weights(n_in: int, n_out: int) -> np.ndarray:
    """n_out x n_in interpolation matrix, half-pixel centres, edge-clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def upsample_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    return _bilinear_weights(h, out_h) @ grid @ _bilinear_weights(w, out_w).T


def render_map(patch: PatchScoreMap | np.ndarray, out_h: int, out_w: int, sigma: float = DEFAULT_SIGMA) -> AnomalyMap:
    """Upsample a patch grid to ``out_h x out_w`` and blur it.

    Bilinear interpolation uses half-pixel centres (``align_corners=False``);
    the Gaussian blur is truncated at 4 sigma with reflect padding, and
    ``sigma == 0`` skips it.  The image score is the maximum pixel.
    """
    scores = patch.scores if isinstance(patch, PatchScoreMap) else np.asarray(patch)
    h, w = scores.shape
    if out_h < h or out_w < w:
        raise ValueError(f"target {out_h}x{out_w} is smaller than the {h}x{w} score grid")
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    up = upsample_bilinear(scores, out_h, out_w)
    if sigma > 0:
        up = gaussian_filter(up, sigma=sigma, mode="reflect", truncate=4.0)
    pixels = up.astype(np.float32)
    return AnomalyMap(pixels, float(pixels.max()), float(sigma))


def normalize_maps(maps: Sequence[AnomalyMap]) -> list[AnomalyMap]:
    """Min-max rescale all maps to [0, 1] with one global min/max.

    Only for display; AUROC is rank-invariant so evaluation never needs it.
    """
    if not maps:
        raise ValueError("need at least one map")
    lo = min(float(m.pixels.min()) for m in maps)
    hi = max(float(m.pixels.max()) for m in maps)
    out = []
    for m in maps:
        if hi == lo:
            px = np.full_like(m.pixels, 0.5)
            out.append(AnomalyMap(px, 0.5, m.smoothing_sigma, degenerate=True))
            continue
        px = ((m.pixels.astype(np.float64) - lo) / (hi - lo)).astype(np.float32)
        out.append(AnomalyMap(px, float(px.max()), m.smoothing_sigma))
    return out


def to_pgm(pixels: np.ndarray, lo: float | None = None, hi: float | None = None) -> bytes:
    """8-bit binary PGM rendering of a map, for eyeballing."""
    px = np.asarray(pixels, dtype=np.float64)
    lo = float(px.min()) if lo is None else lo
    hi = float(px.max()) if hi is None else hi
    scaled = np.zeros_like(px) if hi == lo else (px - lo) / (hi - lo)
    img = np.clip(np.round(scaled * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()
