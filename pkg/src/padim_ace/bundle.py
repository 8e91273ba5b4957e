"""ModelBundle: a fitted model persisted as one ZIP of NPY tensors + manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

from .detectors import TargetSignature
from .errors import ConfigurationError
from .gaussian import GaussianField, WhitenField
from .npyio import PathLike, read_archive, write_archive

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelBundle:
    field: GaussianField
    whiten: WhitenField
    channel_indices: tuple[int, ...]
    extractor_seed: int
    seed: int
    image_shape: tuple[int, int]
    signature: Optional[TargetSignature] = None
    features: str = "toy"
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def d(self) -> int:
        return len(self.channel_indices)

    def with_signature(self, sig: TargetSignature) -> "ModelBundle":
        return replace(self, signature=sig)

    def manifest(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "d": self.d,
            "grid": list(self.field.grid),
            "image_shape": list(self.image_shape),
            "cov_type": self.field.cov_type,
            "epsilon": self.field.epsilon,
            "aggregation": self.field.aggregation,
            "sample_count": self.field.sample_count,
            "channel_indices": list(self.channel_indices),
            "extractor_seed": self.extractor_seed,
            "seed": self.seed,
            "features": self.features,
            "signature_mode": None if self.signature is None else self.signature.mode,
            "signature_source_count": None if self.signature is None else self.signature.source_count,
            "extra": self.extra,
        }

    def tensors(self) -> dict[str, np.ndarray]:
        out = {
            "means": np.asarray(self.field.means, dtype=np.float32),
            "covariance": np.asarray(self.field.covariance, dtype=np.float32),
            "whitening": np.asarray(self.whiten.transforms, dtype=np.float32),
        }
        if self.signature is not None:
            out["signature"] = np.asarray(self.signature.vector, dtype=np.float32)
        return out

    def save(self, path: PathLike) -> None:
        entries: dict[str, Any] = {"manifest.json": json.dumps(self.manifest(), indent=2).encode("utf-8")}
        entries.update(self.tensors())
        write_archive(path, entries)


def load_bundle(path: PathLike) -> ModelBundle:
    entries = read_archive(path)
    try:
        m = json.loads(entries["manifest.json"].decode("utf-8"))
        means, cov, white = entries["means"], entries["covariance"], entries["whitening"]
    except KeyError as exc:
        raise ConfigurationError(f"model bundle {path} lacks entry {exc.args[0]!r}") from exc
    if m.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported bundle format {m.get('format_version')}")
    if means.shape[-1] != m["d"] or len(m["channel_indices"]) != m["d"]:
        raise ConfigurationError("bundle manifest d disagrees with its tensors")
    gfield = GaussianField(
        means=means,
        cov_type=m["cov_type"],
        covariance=cov,
        epsilon=m["epsilon"],
        sample_count=m["sample_count"],
        aggregation=m["aggregation"],
    )
    sig = None
    if "signature" in entries:
        sig = TargetSignature(m["signature_mode"], entries["signature"], m["signature_source_count"])
    return ModelBundle(
        field=gfield,
        whiten=WhitenField(m["cov_type"], white),
        channel_indices=tuple(m["channel_indices"]),
        extractor_seed=m["extractor_seed"],
        seed=m["seed"],
        image_shape=tuple(m["image_shape"]),
        signature=sig,
        features=m.get("features", "toy"),
        extra=m.get("extra", {}),
    )
