"""AUROC (Mann-Whitney form), threshold masks and multi-run aggregation."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .anomaly_map import AnomalyMap
from .errors import UndefinedMetricError

METRICS = ("image_auroc", "pixel_auroc")


def auroc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative.

    Ties count one half.  Computed from average ranks over a global sort,
    so the result does not depend on input order.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores for {labels.size} labels")
    if scores.size < 2:
        raise UndefinedMetricError("AUROC needs at least two samples")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    pos = labels.astype(bool)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC is undefined when only one class is present")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pixel_auroc(maps: Sequence[AnomalyMap | np.ndarray], masks: Sequence[np.ndarray]) -> float:
    """AUROC over the concatenated pixels of every map."""
    if len(maps) != len(masks):
        raise ValueError(f"{len(maps)} maps for {len(masks)} masks")
    scores, labels = [], []
    for m, mask in zip(maps, masks):
        px = m.pixels if isinstance(m, AnomalyMap) else np.asarray(m)
        mask = np.asarray(mask)
        if px.shape != mask.shape:
            raise ValueError(f"map {px.shape} and mask {mask.shape} differ")
        scores.append(px.ravel())
        labels.append(mask.ravel() != 0)
    labels_all = np.concatenate(labels) if labels else np.zeros(0, bool)
    if not labels_all.any():
        raise UndefinedMetricError("no positive pixels in the masks")
    return auroc(np.concatenate(scores), labels_all)


def threshold_mask(m: AnomalyMap | np.ndarray, threshold: float) -> np.ndarray:
    px = m.pixels if isinstance(m, AnomalyMap) else np.asarray(m)
    return (px >= threshold).astype(np.uint8)


@dataclass
class EvalReport:
    image_auroc: float
    pixel_auroc: Optional[float]
    per_run: list[dict[str, Any]]
    mean: dict[str, Optional[float]]
    std: dict[str, Optional[float]]
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict[str, Any]:
        return {
            "image_auroc": self.image_auroc,
            "pixel_auroc": self.pixel_auroc,
            "runs": self.per_run,
            "mean": self.mean,
            "std": self.std,
            "config": self.config,
            "fingerprint": self.fingerprint,
        }

    def to_json(self) -> str:
        # json emits shortest round-trip reprs (up to 17 significant digits)
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvalReport":
        return cls(d["image_auroc"], d.get("pixel_auroc"), d["runs"], d["mean"], d["std"], d.get("config", {}))


def _mean_std(values: list[float]) -> tuple[float, float]:
    mean = math.fsum(values) / len(values)
    if len(values) == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)


def aggregate_runs(runs: Sequence[dict[str, Any]], config: dict[str, Any] | None = None) -> EvalReport:
    """Mean and sample standard deviation (divisor R - 1) per metric.

    Each run is a dict with ``seed``, ``image_auroc`` and optionally
    ``pixel_auroc``.  A metric missing from any run is reported as ``None``.
    """
    if not runs:
        raise ValueError("need at least one run")
    mean: dict[str, Optional[float]] = {}
    std: dict[str, Optional[float]] = {}
    for key in METRICS:
        vals = [r.get(key) for r in runs]
        if any(v is None for v in vals):
            mean[key] = std[key] = None
        else:
            mean[key], std[key] = _mean_std([float(v) for v in vals])
    return EvalReport(
        image_auroc=mean["image_auroc"],
        pixel_auroc=mean["pixel_auroc"],
        per_run=[dict(r) for r in runs],
        mean=mean,
        std=std,
        config=dict(config or {}),
    )
