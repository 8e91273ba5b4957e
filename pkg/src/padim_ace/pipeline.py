"""Library-level pipeline steps shared by the CLI: extract, fit, sign, score, evaluate."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, Optional, Sequence, TypeVar

import numpy as np

from .anomaly_map import AnomalyMap, render_map
from .bundle import ModelBundle
from .detectors import PatchScoreMap, TargetSignature, build_target_signature, score_volume
from .errors import ConfigurationError
from .features import FeaturePyramid, assemble_embedding, load_pyramids, pyramid_to_entries, toy_extract, toy_weights
from .gaussian import fit_gaussians, precompute_whitening
from .metrics import auroc, pixel_auroc
from .npyio import PathLike, read_archive, write_archive
from .rng import choose_channel_indices, rng_stream
from .synth import Dataset

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "PATCH_ACE_THREADS"
CHANNEL_STREAM = 0


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Order-preserving map; runs on a thread pool when the env cap allows."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def extract_pyramids(images: Sequence[np.ndarray], extractor_seed: int) -> list[FeaturePyramid]:
    weights = toy_weights(extractor_seed)
    return parallel_map(lambda img: toy_extract(img, extractor_seed, weights), images)


def write_feature_archive(path: PathLike, ids: Sequence[str], pyramids: Sequence[FeaturePyramid], extractor_seed: Optional[int]) -> None:
    entries: dict[str, Any] = {
        "ids.json": json.dumps({"ids": list(ids), "extractor_seed": extractor_seed}).encode("utf-8")
    }
    for k in range(3):
        entries[f"level{k + 1}"] = np.stack([p.levels[k] for p in pyramids]).astype(np.float32)
    write_archive(path, entries)


def read_feature_archive(path: PathLike) -> dict[str, FeaturePyramid]:
    """Pyramids keyed by image id from a batched ``level1..3`` archive.

    A single-image archive without ``ids.json`` is keyed by ``""``.
    """
    entries = read_archive(path)
    meta = json.loads(entries["ids.json"].decode("utf-8")) if "ids.json" in entries else {"ids": [""]}
    pyramids = load_pyramids(entries, meta["ids"])
    return dict(zip(meta["ids"], pyramids))


def pyramids_for(dataset: Dataset, items: Sequence[dict[str, Any]], extractor_seed: int,
                 features: Optional[dict[str, FeaturePyramid]] = None) -> list[FeaturePyramid]:
    if features is not None:
        missing = [it["id"] for it in items if it["id"] not in features]
        if missing:
            raise ConfigurationError(f"feature archive lacks images {missing[:3]}")
        return [features[it["id"]] for it in items]
    return extract_pyramids([dataset.image(it) for it in items], extractor_seed)


def fit_model(
    pyramids: Sequence[FeaturePyramid],
    image_shape: tuple[int, int],
    d: int = 100,
    cov_type: str = "full",
    aggregation: str = "mean_diagonal",
    epsilon: float = 0.01,
    seed: int = 0,
    extractor_seed: int = 0,
    features: str = "toy",
) -> ModelBundle:
    """Select channels from stream ``(seed, 0)``, fit the field and whitening."""
    if not pyramids:
        raise ConfigurationError("no training images")
    total = pyramids[0].total_channels
    idx = choose_channel_indices(rng_stream(seed, CHANNEL_STREAM), total, d)
    vols = [assemble_embedding(p, idx) for p in pyramids]
    gfield = fit_gaussians(vols, cov_type, epsilon, aggregation)
    return ModelBundle(
        field=gfield,
        whiten=precompute_whitening(gfield),
        channel_indices=tuple(idx),
        extractor_seed=extractor_seed,
        seed=seed,
        image_shape=tuple(image_shape),
        features=features,
    )


def grid_masks(masks: Sequence[np.ndarray], grid: tuple[int, int]) -> list[np.ndarray]:
    """Pixel masks to patch-grid masks: a cell is positive when at least
    half of its pixel block is positive."""
    gh, gw = grid
    out = []
    for m in masks:
        m = np.asarray(m, dtype=np.float64)
        h, w = m.shape
        if h % gh or w % gw:
            raise ValueError(f"mask {h}x{w} does not tile the {gh}x{gw} grid")
        frac = m.reshape(gh, h // gh, gw, w // gw).mean(axis=(1, 3))
        out.append((frac >= 0.5).astype(np.uint8))
    return out


def build_signature(bundle: ModelBundle, pyramids: Sequence[FeaturePyramid],
                    masks: Optional[Sequence[np.ndarray]] = None, mode: str = "global") -> TargetSignature:
    if pyramids and pyramids[0].total_channels <= max(bundle.channel_indices, default=-1):
        raise ConfigurationError("bundle channel indices exceed the feature channel count")
    vols = [assemble_embedding(p, bundle.channel_indices) for p in pyramids]
    gmasks = None if masks is None else grid_masks(masks, bundle.field.grid)
    return build_target_signature(vols, gmasks, mode)


def score_images(bundle: ModelBundle, pyramids: Sequence[FeaturePyramid], ids: Sequence[str],
                 detector: str = "ace", sigma: float = 4.0) -> list[tuple[PatchScoreMap, AnomalyMap]]:
    if detector == "ace" and bundle.signature is None:
        raise ConfigurationError(
            "bundle has no target signature; run `padim-ace signature` before scoring with --detector ace"
        )
    h, w = bundle.image_shape

    def one(args):
        pyr, iid = args
        vol = assemble_embedding(pyr, bundle.channel_indices)
        patch = score_volume(vol, bundle.field, bundle.whiten, bundle.signature, detector, image_id=iid)
        return patch, render_map(patch, h, w, sigma)

    return parallel_map(one, list(zip(pyramids, ids)))


def write_results(path: PathLike, ids: Sequence[str], scored: Sequence[tuple[PatchScoreMap, AnomalyMap]],
                  meta: dict[str, Any]) -> None:
    entries: dict[str, Any] = {
        "meta.json": json.dumps({**meta, "ids": list(ids)}, indent=2).encode("utf-8"),
        "image_scores": np.array([m.image_score for _, m in scored], dtype=np.float32),
    }
    for iid, (patch, amap) in zip(ids, scored):
        entries[f"patch/{iid}"] = patch.scores.astype(np.float32)
        entries[f"map/{iid}"] = amap.pixels.astype(np.float32)
    write_archive(path, entries)


def read_results(path: PathLike) -> tuple[dict[str, Any], dict[str, Any]]:
    entries = read_archive(path)
    meta = json.loads(entries.pop("meta.json").decode("utf-8"))
    return meta, entries


def evaluate_results(meta: dict[str, Any], entries: dict[str, Any], dataset: Dataset) -> dict[str, Any]:
    """Image and pixel AUROC of a results archive against dataset labels."""
    items = {it["id"]: it for it in dataset.manifest.items("all")}
    ids = meta["ids"]
    try:
        labels = [items[i]["label"] for i in ids]
    except KeyError as exc:
        raise ConfigurationError(f"result image {exc.args[0]!r} not in the dataset") from exc
    scores = entries["image_scores"]
    maps = [entries[f"map/{i}"] for i in ids]
    masks = [dataset.mask(items[i]) for i in ids]
    return {
        "seed": meta.get("seed"),
        "image_auroc": auroc(scores, labels),
        "pixel_auroc": pixel_auroc(maps, masks),
    }
