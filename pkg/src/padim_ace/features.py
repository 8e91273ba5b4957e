"""Patch embeddings: a deterministic toy extractor and PaDiM-style assembly.

The toy extractor is a stand-in for a pretrained CNN backbone: three stages
of random 3x3 convolution, ReLU and 2x2 average pooling.  Any backbone that
produces a three-level pyramid can be plugged in instead through
:func:`load_pyramids`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import rng_stream

LEVEL_CHANNELS = (16, 32, 64)
TOTAL_CHANNELS = sum(LEVEL_CHANNELS)
DEFAULT_D = 100


@dataclass(frozen=True)
class FeaturePyramid:
    levels: tuple[np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self):
        if len(self.levels) != 3:
            raise ValueError(f"a feature pyramid has exactly 3 levels, got {len(self.levels)}")
        shapes = [lvl.shape for lvl in self.levels]
        if any(len(s) != 3 for s in shapes):
            raise ValueError(f"pyramid levels must be C x H x W, got {shapes}")
        for (_, h0, w0), (_, h1, w1) in zip(shapes, shapes[1:]):
            if h1 > h0 or w1 > w0:
                raise ValueError(f"spatial extents must be non-increasing, got {shapes}")

    @property
    def total_channels(self) -> int:
        return sum(lvl.shape[0] for lvl in self.levels)


@dataclass(frozen=True)
class EmbeddingVolume:
    """Selected-channel embedding, ``data[:, i, j]`` is the patch vector at (i, j)."""

    data: np.ndarray  # d x H' x W'
    channel_indices: tuple[int, ...]

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != len(self.channel_indices):
            raise ValueError("embedding data must be d x H' x W' with d == len(channel_indices)")

    @property
    def d(self) -> int:
        return self.data.shape[0]

    @property
    def grid(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


def _conv3x3_reflect(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # x: C_in x H x W, weights: C_out x C_in x 3 x 3; no bias
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))  # C_in x H x W x 3 x 3
    return np.einsum("oikl,ihwkl->ohw", weights, windows, optimize=True)


def _avg_pool2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def toy_weights(seed: int) -> list[np.ndarray]:
    """Convolution weights for the three stages, one RNG stream per stage."""
    weights = []
    c_in = 1
    for k, c_out in enumerate(LEVEL_CHANNELS, start=1):
        rng = rng_stream(seed, k)
        scale = 1.0 / np.sqrt(9.0 * c_in)
        weights.append(rng.standard_normal((c_out, c_in, 3, 3)) * scale)
        c_in = c_out
    return weights


def toy_extract(image: np.ndarray, seed: int, weights: Sequence[np.ndarray] | None = None) -> FeaturePyramid:
    """Run the three-stage random conv/ReLU/avg-pool extractor on one image.

    Args:
        image: H x W grayscale image, H and W divisible by 8.
        seed: extractor seed; stage ``k`` draws its weights from stream ``(seed, k)``.
        weights: precomputed :func:`toy_weights` output for the same seed.

    Returns:
        Pyramid with (16, H/2, W/2), (32, H/4, W/4) and (64, H/8, W/8) levels, float32.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    h, w = image.shape
    if h < 8 or w < 8 or h % 8 or w % 8:
        raise ValueError(f"image extents must be >= 8 and divisible by 8, got {h}x{w}")
    if weights is None:
        weights = toy_weights(seed)
    x = image.astype(np.float64)[None]
    levels = []
    for wk in weights:
        x = _avg_pool2(np.maximum(_conv3x3_reflect(x, wk), 0.0))
        levels.append(x.astype(np.float32))
    return FeaturePyramid(tuple(levels))


def _upsample_nearest(level: np.ndarray, h: int, w: int) -> np.ndarray:
    _, lh, lw = level.shape
    rows = (np.arange(h) * lh) // h
    cols = (np.arange(w) * lw) // w
    return level[:, rows[:, None], cols[None, :]]


def assemble_embedding(pyr: FeaturePyramid, channel_indices: Sequence[int]) -> EmbeddingVolume:
    """Align levels to the level-1 grid, concatenate, then select channels.

    Deeper levels are upsampled by nearest-neighbour replication, so the
    selected patch vectors contain only values present in the pyramid.
    """
    idx = np.asarray(channel_indices, dtype=np.int64)
    total = pyr.total_channels
    if idx.size and (idx.min() < 0 or idx.max() >= total):
        raise ValueError(f"channel index out of range for {total} channels")
    if len(set(idx.tolist())) != idx.size:
        raise ValueError("channel indices must be distinct")
    _, h, w = pyr.levels[0].shape
    full = np.concatenate([pyr.levels[0]] + [_upsample_nearest(lvl, h, w) for lvl in pyr.levels[1:]])
    return EmbeddingVolume(np.ascontiguousarray(full[idx]), tuple(int(i) for i in idx))


def pyramid_to_entries(pyr: FeaturePyramid, prefix: str = "") -> dict[str, np.ndarray]:
    return {f"{prefix}level{k}": lvl for k, lvl in enumerate(pyr.levels, start=1)}


def load_pyramids(entries: Mapping[str, np.ndarray], ids: Sequence[str] | None = None) -> list[FeaturePyramid]:
    """Pyramids from archive entries.

    Accepts either a single image (``level1..3`` with C x H x W) or a batch
    (``level1..3`` with a leading batch axis).  ``ids`` is only used to check
    the batch length.
    """
    try:
        levels = [np.asarray(entries[f"level{k}"]) for k in (1, 2, 3)]
    except KeyError as exc:
        raise ValueError(f"feature archive lacks entry {exc.args[0]!r}") from exc
    if all(lvl.ndim == 3 for lvl in levels):
        out = [FeaturePyramid(tuple(levels))]
    elif all(lvl.ndim == 4 for lvl in levels):
        n = levels[0].shape[0]
        if any(lvl.shape[0] != n for lvl in levels):
            raise ValueError("batched pyramid levels disagree on batch size")
        out = [FeaturePyramid(tuple(lvl[i] for lvl in levels)) for i in range(n)]
    else:
        raise ValueError("pyramid levels must all be 3-D or all be 4-D")
    if ids is not None and len(ids) != len(out):
        raise ValueError(f"{len(ids)} ids for {len(out)} pyramids")
    return out
