"""Synthetic SAR-like scenes and the train/val/test split protocol.

Backgrounds are L-look speckle, Gamma(L, 1/L) intensity with unit mean.
Targets are filled ellipses whose interior intensity is multiplied by a
contrast factor.  Datasets are stored in a ZIP archive holding
``img/<id>`` (float32), ``mask/<id>`` (uint8) and ``manifest.json``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ConfigurationError, PlacementError
from .npyio import PathLike, read_archive, write_archive
from .rng import derive_seed, rng_stream

MAX_PLACEMENT_TRIES = 100
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SceneParams:
    height: int = 64
    width: int = 64
    speckle_looks: int = 4
    target_count: int = 2
    target_contrast: float = 5.0
    target_radii: tuple[float, float] = (3.0, 7.0)
    seed: int = 7

    def validate(self) -> None:
        if self.height < 32 or self.width < 32:
            raise ValueError(f"scene extents must be >= 32, got {self.height}x{self.width}")
        if self.height % 8 or self.width % 8:
            raise ValueError(f"scene extents must be divisible by 8, got {self.height}x{self.width}")
        if int(self.speckle_looks) != self.speckle_looks or self.speckle_looks < 1:
            raise ValueError(f"speckle_looks must be a positive integer, got {self.speckle_looks}")
        if self.target_count < 0:
            raise ValueError("target_count must be non-negative")
        if not self.target_contrast > 1:
            raise ValueError(f"target_contrast must exceed 1, got {self.target_contrast}")
        rmin, rmax = self.target_radii
        if not 0 < rmin <= rmax:
            raise ValueError(f"invalid target radii {self.target_radii}")
        if 2 * rmax + 1 > min(self.height, self.width):
            raise ValueError(f"target radius {rmax} does not fit a {self.height}x{self.width} scene")


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.8
    val_share: float = 0.5

    def split_counts(self, n_normal: int, n_anomalous: int) -> dict[str, tuple[int, int]]:
        """(normals, anomalous) per split.

        The train boundary is floored and held-out normals are divided
        between val and test, any remainder going back to train.  For
        anomalous images an odd leftover goes to test.
        """
        held = n_normal - int(np.floor(self.train_fraction * n_normal))
        val_n = int(np.floor(held * self.val_share))
        test_n = val_n if self.val_share == 0.5 else held - val_n
        train_n = n_normal - val_n - test_n
        val_a = int(np.floor(n_anomalous * self.val_share))
        test_a = n_anomalous - val_a
        return {"train": (train_n, 0), "val": (val_n, val_a), "test": (test_n, test_a)}


@dataclass
class DatasetManifest:
    ratios: dict[str, float]
    splits: dict[str, list[dict[str, Any]]]
    generator: dict[str, Any] = field(default_factory=dict)
    format_version: int = 1

    def to_json(self) -> bytes:
        return json.dumps(asdict(self), indent=2, sort_keys=True).encode("utf-8")

    @classmethod
    def from_json(cls, raw: bytes) -> "DatasetManifest":
        d = json.loads(raw.decode("utf-8"))
        return cls(d["ratios"], d["splits"], d.get("generator", {}), d.get("format_version", 1))

    def items(self, split: str) -> list[dict[str, Any]]:
        if split == "all":
            return [it for s in SPLITS for it in self.splits[s]]
        if split not in self.splits:
            raise ValueError(f"unknown split {split!r}")
        return self.splits[split]


def _ellipse_mask(h: int, w: int, cy: float, cx: float, a: float, b: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return u * u + v * v <= 1.0


def generate_scene(p: SceneParams) -> tuple[np.ndarray, np.ndarray]:
    """One speckled scene with ``p.target_count`` non-overlapping bright ellipses.

    Returns the float32 intensity image and the uint8 target mask.
    """
    p.validate()
    rng = rng_stream(p.seed)
    h, w = p.height, p.width
    looks = int(p.speckle_looks)
    image = rng.gamma(shape=looks, scale=1.0 / looks, size=(h, w))
    mask = np.zeros((h, w), dtype=bool)
    rmin, rmax = p.target_radii
    for _ in range(p.target_count):
        for _attempt in range(MAX_PLACEMENT_TRIES):
            a, b = rng.uniform(rmin, rmax, size=2)
            theta = rng.uniform(0.0, np.pi)
            half_x = np.sqrt((a * np.cos(theta)) ** 2 + (b * np.sin(theta)) ** 2)
            half_y = np.sqrt((a * np.sin(theta)) ** 2 + (b * np.cos(theta)) ** 2)
            cy = rng.uniform(half_y, h - 1 - half_y)
            cx = rng.uniform(half_x, w - 1 - half_x)
            blob = _ellipse_mask(h, w, cy, cx, a, b, theta)
            if blob.any() and not (blob & mask).any():
                mask |= blob
                break
        else:
            raise PlacementError(f"could not place target after {MAX_PLACEMENT_TRIES} tries")
    image[mask] *= p.target_contrast
    return image.astype(np.float32), mask.astype(np.uint8)


def generate_dataset(
    p: SceneParams,
    n_normal: int,
    n_anomalous: int,
    ratios: SplitConfig = SplitConfig(),
    out: Optional[PathLike] = None,
) -> DatasetManifest:
    """Generate normal and anomalous scenes, split them and write the archive.

    Scene ``i`` of each class is seeded from ``(p.seed, class, i)``.  Normal
    scenes have no targets; anomalous scenes have ``max(1, p.target_count)``.
    """
    p.validate()
    if n_normal < 5:
        raise ValueError(f"need at least 5 normal images, got {n_normal}")
    if n_anomalous < 2:
        raise ValueError(f"need at least 2 anomalous images, got {n_anomalous}")
    counts = ratios.split_counts(n_normal, n_anomalous)
    if counts["test"][0] == 0 or counts["test"][1] == 0:
        raise ConfigurationError(f"split {counts} leaves a class empty in the test split")

    entries: dict[str, Any] = {}
    normals, anomalous = [], []
    for i in range(n_normal):
        sp = SceneParams(**{**asdict(p), "target_count": 0, "seed": derive_seed(p.seed, 0, i)})
        img, mask = generate_scene(sp)
        iid = f"normal_{i:04d}"
        entries[f"img/{iid}"], entries[f"mask/{iid}"] = img, mask
        normals.append({"id": iid, "image": f"img/{iid}", "mask": f"mask/{iid}", "label": 0})
    for i in range(n_anomalous):
        sp = SceneParams(**{**asdict(p), "target_count": max(1, p.target_count), "seed": derive_seed(p.seed, 1, i)})
        img, mask = generate_scene(sp)
        iid = f"anomalous_{i:04d}"
        entries[f"img/{iid}"], entries[f"mask/{iid}"] = img, mask
        anomalous.append({"id": iid, "image": f"img/{iid}", "mask": f"mask/{iid}", "label": 1})

    splits: dict[str, list[dict[str, Any]]] = {}
    n_at = a_at = 0
    for name in SPLITS:
        nn, na = counts[name]
        splits[name] = normals[n_at:n_at + nn] + anomalous[a_at:a_at + na]
        n_at += nn
        a_at += na

    gen = asdict(p)
    gen.update(n_normal=n_normal, n_anomalous=n_anomalous, target_radii=list(p.target_radii))
    manifest = DatasetManifest(asdict(ratios), splits, gen)
    if out is not None:
        entries["manifest.json"] = manifest.to_json()
        write_archive(out, entries)
    return manifest


@dataclass
class Dataset:
    manifest: DatasetManifest
    entries: dict[str, Any]

    def image(self, item: dict[str, Any]) -> np.ndarray:
        return self.entries[item["image"]]

    def mask(self, item: dict[str, Any]) -> np.ndarray:
        return self.entries[item["mask"]]


def load_dataset(path: PathLike) -> Dataset:
    entries = read_archive(Path(path))
    if "manifest.json" not in entries:
        raise ValueError(f"{path} has no manifest.json entry")
    return Dataset(DatasetManifest.from_json(entries.pop("manifest.json")), entries)
