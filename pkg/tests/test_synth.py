import hashlib
import json
import zipfile

import numpy as np
import pytest

from padim_ace.errors import ConfigurationError, PlacementError
from padim_ace.synth import SceneParams, SplitConfig, generate_dataset, generate_scene, load_dataset


def test_no_targets_gives_empty_mask():
    img, mask = generate_scene(SceneParams(target_count=0, seed=1))
    assert img.dtype == np.float32 and mask.dtype == np.uint8
    assert img.shape == mask.shape == (64, 64)
    assert not mask.any()


def test_scene_determinism():
    p = SceneParams(seed=99)
    a, b = generate_scene(p), generate_scene(p)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
    c = generate_scene(SceneParams(seed=100))
    assert a[0].tobytes() != c[0].tobytes()


def test_target_contrast_ratio():
    # Monte-Carlo oracle: speckle is unit-mean and independent of the
    # target layout, so E[target] / E[background] = c.
    ratios = []
    for seed in range(20):
        img, mask = generate_scene(SceneParams(speckle_looks=4, target_contrast=5.0, seed=seed))
        m = mask.astype(bool)
        ratios.append(img[m].mean() / img[~m].mean())
    assert np.mean(ratios) == pytest.approx(5.0, rel=0.10)


def test_background_unit_mean():
    for seed in range(5):
        img, _ = generate_scene(SceneParams(height=256, width=256, target_count=0, speckle_looks=4, seed=seed))
        assert 0.95 <= img.mean() <= 1.05


def test_targets_scale_only_masked_pixels():
    p = SceneParams(target_count=3, seed=5)
    img, mask = generate_scene(p)
    background, _ = generate_scene(SceneParams(target_count=0, seed=5))
    m = mask.astype(bool)
    assert m.any()
    np.testing.assert_array_equal(img[~m], background[~m])
    np.testing.assert_allclose(img[m], background[m] * np.float32(5.0), rtol=1e-6)


def test_placement_failure():
    p = SceneParams(height=32, width=32, target_count=40, target_radii=(7.0, 7.0), seed=0)
    with pytest.raises(PlacementError):
        generate_scene(p)


@pytest.mark.parametrize("kwargs", [
    {"height": 24}, {"width": 60}, {"speckle_looks": 0}, {"target_contrast": 1.0},
    {"target_radii": (5.0, 2.0)}, {"target_radii": (3.0, 40.0)},
])
def test_param_validation(kwargs):
    with pytest.raises(ValueError):
        generate_scene(SceneParams(**kwargs))


@pytest.mark.parametrize("n_normal,n_anom,expected", [
    (10, 4, {"train": (8, 0), "val": (1, 2), "test": (1, 2)}),
    (80, 20, {"train": (64, 0), "val": (8, 10), "test": (8, 10)}),
    (11, 5, {"train": (9, 0), "val": (1, 2), "test": (1, 3)}),
    (13, 3, {"train": (11, 0), "val": (1, 1), "test": (1, 2)}),
])
def test_split_arithmetic(n_normal, n_anom, expected):
    assert SplitConfig().split_counts(n_normal, n_anom) == expected


def test_dataset_protocol(tmp_path):
    out = tmp_path / "d.npz"
    manifest = generate_dataset(SceneParams(seed=3), 10, 4, out=out)
    counts = {k: (sum(1 for it in v if it["label"] == 0), sum(it["label"] for it in v))
              for k, v in manifest.splits.items()}
    assert counts == {"train": (8, 0), "val": (1, 2), "test": (1, 2)}
    assert all(it["label"] == 0 for it in manifest.splits["train"])
    ds = load_dataset(out)
    for it in ds.manifest.items("all"):
        mask = ds.mask(it)
        assert ds.image(it).dtype == np.float32 and mask.dtype == np.uint8
        assert bool(mask.any()) == bool(it["label"])
    with zipfile.ZipFile(out) as zf:
        names = zf.namelist()
    assert "manifest.json" in names and "img/normal_0000.npy" in names and "mask/anomalous_0003.npy" in names
    assert json.loads(ds.manifest.to_json())["ratios"] == {"train_fraction": 0.8, "val_share": 0.5}


def test_dataset_regeneration_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    generate_dataset(SceneParams(seed=7), 6, 2, out=a)
    generate_dataset(SceneParams(seed=7), 6, 2, out=b)
    assert hashlib.sha256(a.read_bytes()).digest() == hashlib.sha256(b.read_bytes()).digest()


def test_dataset_errors():
    with pytest.raises(ConfigurationError):
        generate_dataset(SceneParams(), 5, 2)  # one held-out normal cannot cover val and test
    with pytest.raises(ValueError):
        generate_dataset(SceneParams(), 4, 2)
    with pytest.raises(ValueError):
        generate_dataset(SceneParams(), 10, 1)
