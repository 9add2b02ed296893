"""Tests for the synthetic texture suite and the random-projection extractor."""

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from grnr.eval import load_mvtec_layout
from grnr.synthetic import (
    BLOTCH_CATEGORY,
    RandomConvFeatures,
    inject_blotch,
    make_suite,
    make_texture,
    random_feature_stack,
    to_rgb,
)


# ------------------------------------------------------------------ textures


def test_texture_shape_and_range():
    rng = np.random.default_rng(30)
    for kind in ("sinusoid", "checker"):
        tex = make_texture(64, kind, rng)
        assert tex.shape == (64, 64)
        assert tex.min() >= 0.0 and tex.max() <= 1.0
        assert tex.std() > 0.05  # actually textured, not flat


def test_texture_deterministic():
    a = make_texture(48, "sinusoid", np.random.default_rng(31))
    b = make_texture(48, "sinusoid", np.random.default_rng(31))
    np.testing.assert_array_equal(a, b)
    c = make_texture(48, "sinusoid", np.random.default_rng(32))
    assert not np.array_equal(a, c)


def test_texture_period_divides_eight():
    # Translating by 8 pixels along either axis must reproduce the pattern up
    # to the additive noise; the feature extractor counts on this.
    rng = np.random.default_rng(33)
    for kind in ("sinusoid", "checker"):
        for trial in range(6):
            tex = make_texture(64, kind, rng)
            for axis in (0, 1):
                diff = np.abs(np.roll(tex, 8, axis=axis) - tex)
                assert diff.mean() < 0.1


def test_checker_is_bimodal():
    rng = np.random.default_rng(34)
    tex = make_texture(64, "checker", rng)
    gaps = np.diff(np.sort(tex.ravel()))
    split = int(np.argmax(gaps))
    assert gaps[split] > 0.15  # clear separation between dark and light cells
    assert 0.2 < split / tex.size < 0.8  # both plateaus well populated


def test_texture_unknown_kind():
    with pytest.raises(ValueError, match="plaid"):
        make_texture(32, "plaid", np.random.default_rng(0))


# ------------------------------------------------------------------- blotches


def test_blotch_mask_and_placement():
    rng = np.random.default_rng(35)
    tex = make_texture(64, "sinusoid", rng)
    out, mask = inject_blotch(tex, rng, blotch=16, block=4)
    assert mask.dtype == np.uint8
    assert set(np.unique(mask)) <= {0, 1}
    assert mask.sum() == 16 * 16
    np.testing.assert_array_equal(out[mask == 0], tex[mask == 0])
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    assert rows.min() >= 8 and rows.max() < 64 - 8  # margin = blotch // 2
    assert cols.min() >= 8 and cols.max() < 64 - 8


def test_blotch_is_blockwise_constant():
    rng = np.random.default_rng(36)
    tex = np.zeros((64, 64))
    out, mask = inject_blotch(tex, rng, blotch=16, block=4)
    top = int(np.flatnonzero(mask.any(axis=1))[0])
    left = int(np.flatnonzero(mask.any(axis=0))[0])
    patch = out[top : top + 16, left : left + 16]
    blocks = patch.reshape(4, 4, 4, 4).transpose(0, 2, 1, 3).reshape(16, 16)
    assert (np.ptp(blocks, axis=1) == 0).all()
    # distinct blocks differ (noise, not a constant fill)
    assert len(np.unique(blocks[:, 0])) > 4


def test_blotch_validation():
    rng = np.random.default_rng(37)
    with pytest.raises(ValueError):
        inject_blotch(np.zeros((16, 16)), rng, blotch=16)
    with pytest.raises(ValueError):
        inject_blotch(np.zeros((64, 64)), rng, blotch=14, block=4)


def test_to_rgb():
    tex = np.linspace(0, 1, 16).reshape(4, 4)
    rgb = to_rgb(tex)
    assert rgb.shape == (4, 4, 3)
    assert rgb.dtype == np.uint8
    np.testing.assert_array_equal(rgb[:, :, 0], rgb[:, :, 1])
    np.testing.assert_array_equal(rgb[:, :, 0], rgb[:, :, 2])
    assert rgb[0, 0, 0] == 0 and rgb[3, 3, 0] == 255


# ----------------------------------------------------------------- extractor


def test_extractor_shapes():
    ext = RandomConvFeatures(seed=0)
    rng = np.random.default_rng(38)
    img = rng.integers(0, 256, size=(128, 128, 3), dtype=np.uint8)
    stack = ext.extract(img)
    assert stack.hierarchy_ids == (2, 3)
    assert stack.maps[0].data.shape == (48, 16, 16)
    assert stack.maps[1].data.shape == (96, 8, 8)
    assert stack.maps[0].data.dtype == np.float32


def test_extractor_deterministic():
    rng = np.random.default_rng(39)
    img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    a = RandomConvFeatures(seed=7).extract(img)
    b = RandomConvFeatures(seed=7).extract(img)
    for ma, mb in zip(a.maps, b.maps):
        np.testing.assert_array_equal(ma.data, mb.data)
    c = RandomConvFeatures(seed=8).extract(img)
    assert not np.array_equal(a.maps[0].data, c.maps[0].data)


def test_extractor_uint8_float_equivalence():
    rng = np.random.default_rng(40)
    img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    ext = RandomConvFeatures(seed=1)
    a = ext.extract(img)
    b = ext.extract(img.astype(np.float64) / 255.0)
    for ma, mb in zip(a.maps, b.maps):
        np.testing.assert_array_equal(ma.data, mb.data)


def test_extractor_shift_equivariance():
    # Periodic padding makes the extractor circular: shifting the image by
    # one stride shifts the feature grid by one cell, bit for bit.
    rng = np.random.default_rng(41)
    img = rng.uniform(0, 1, size=(64, 64, 3))
    ext = RandomConvFeatures(seed=2)
    base = ext.extract(img)
    for idx, stride in enumerate(ext.strides):
        rolled = ext.extract(np.roll(img, stride, axis=0))
        np.testing.assert_array_equal(
            rolled.maps[idx].data, np.roll(base.maps[idx].data, 1, axis=1)
        )
        rolled = ext.extract(np.roll(img, stride, axis=1))
        np.testing.assert_array_equal(
            rolled.maps[idx].data, np.roll(base.maps[idx].data, 1, axis=2)
        )


def test_extractor_validation():
    ext = RandomConvFeatures(seed=0)
    rng = np.random.default_rng(42)
    with pytest.raises(ValueError, match="stride"):
        ext.extract(rng.uniform(0, 1, size=(50, 50, 3)))
    with pytest.raises(ValueError, match="shape"):
        ext.extract(rng.uniform(0, 1, size=(50, 50)))
    with pytest.raises(ValueError, match="together"):
        RandomConvFeatures(seed=0, resize=128, crop=None)
    with pytest.raises(ValueError, match="exceeds"):
        RandomConvFeatures(seed=0, resize=64, crop=128)
    with pytest.raises(ValueError, match="align"):
        RandomConvFeatures(seed=0, strides=(8,))


def test_features_for_resizes_and_crops(tmp_path):
    rng = np.random.default_rng(43)
    img = rng.integers(0, 256, size=(200, 150, 3), dtype=np.uint8)
    path = tmp_path / "tex.png"
    Image.fromarray(img).save(path)
    ext = RandomConvFeatures(seed=3, resize=128, crop=64)
    stack = ext.features_for(path)
    assert stack.maps[0].data.shape == (48, 8, 8)
    assert stack.maps[1].data.shape == (96, 4, 4)


def test_features_for_native_resolution(tmp_path):
    rng = np.random.default_rng(44)
    img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    path = tmp_path / "tex.png"
    Image.fromarray(img).save(path)
    stack = RandomConvFeatures(seed=4).features_for(path)
    assert stack.maps[0].data.shape == (48, 8, 8)
    expected = RandomConvFeatures(seed=4).extract(img)
    np.testing.assert_array_equal(stack.maps[0].data, expected.maps[0].data)


# --------------------------------------------------------------------- suite


def test_make_suite_layout(tmp_path):
    category_dir = make_suite(tmp_path, count=3, seed=5, image_size=64)
    assert category_dir == tmp_path / "synthetic"
    good = sorted((category_dir / "test" / "good").glob("*.png"))
    bad = sorted((category_dir / "test" / BLOTCH_CATEGORY).glob("*.png"))
    masks = sorted((category_dir / "ground_truth" / BLOTCH_CATEGORY).glob("*_mask.png"))
    assert [p.name for p in good] == ["000.png", "001.png", "002.png"]
    assert len(bad) == 3 and len(masks) == 3

    index = load_mvtec_layout(tmp_path, "synthetic")
    assert len(index.samples) == 6
    assert sum(s.image_label for s in index.samples) == 3

    mask = np.asarray(Image.open(masks[0]).convert("L"))
    assert set(np.unique(mask)) == {0, 255}
    assert (mask > 0).sum() == 16 * 16


def test_make_suite_deterministic(tmp_path):
    first = make_suite(tmp_path / "a", count=2, seed=9, image_size=64)
    second = make_suite(tmp_path / "b", count=2, seed=9, image_size=64)
    for rel in (
        Path("test/good/000.png"),
        Path(f"test/{BLOTCH_CATEGORY}/001.png"),
        Path(f"ground_truth/{BLOTCH_CATEGORY}/001_mask.png"),
    ):
        assert (first / rel).read_bytes() == (second / rel).read_bytes()
    third = make_suite(tmp_path / "c", count=2, seed=10, image_size=64)
    assert (first / "test/good/000.png").read_bytes() != (
        third / "test/good/000.png"
    ).read_bytes()


def test_random_feature_stack_shapes():
    stack = random_feature_stack(seed=0)
    assert stack.hierarchy_ids == (2, 3)
    assert stack.maps[0].data.shape == (512, 32, 32)
    assert stack.maps[1].data.shape == (1024, 16, 16)
    again = random_feature_stack(seed=0)
    np.testing.assert_array_equal(stack.maps[0].data, again.maps[0].data)
    small = random_feature_stack(seed=0, shapes=((2, 8, 4, 4),))
    assert small.maps[0].data.shape == (8, 4, 4)
