"""Patch-distribution anomaly detection with Mahalanobis and ACE scoring."""

from .anomaly_map import AnomalyMap, normalize_maps, render_map
from .bundle import ModelBundle, load_bundle
from .detectors import (
    PatchScoreMap,
    ScoreValue,
    TargetSignature,
    ace_score,
    ace_score_whitened,
    build_target_signature,
    mahalanobis_score,
    score_volume,
    whiten_signature,
)
from .features import EmbeddingVolume, FeaturePyramid, assemble_embedding, toy_extract
from .gaussian import GaussianField, WhitenField, fit_gaussians, make_isotropic, precompute_whitening
from .metrics import EvalReport, aggregate_runs, auroc, pixel_auroc, threshold_mask
from .npyio import read_archive, read_tensor, write_archive, write_tensor
from .rng import choose_channel_indices, rng_stream
from .synth import SceneParams, SplitConfig, generate_dataset, generate_scene

__version__ = "0.1.0"
