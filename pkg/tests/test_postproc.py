"""Tests for upsampling, fusion, smoothing, and heatmap rendering."""

import math

import numpy as np
import pytest
from PIL import Image

from grnr.core import (
    HierarchyScoreMap,
    RegressionConfig,
    sample_global_support,
    score_map_for_hierarchy,
)
from grnr.feature import FeatureMap
from grnr.postproc import (
    AnomalyMap,
    finalize,
    fuse_hierarchies,
    gaussian_smooth,
    render_heatmap,
    upsample_map,
)


def naive_bilinear(arr, target_h, target_w):
    """Per-pixel bilinear loop with half-pixel centers, used as an oracle."""
    src_h, src_w = arr.shape
    out = np.zeros((target_h, target_w))
    for r in range(target_h):
        pr = (r + 0.5) * src_h / target_h - 0.5
        pr = min(max(pr, 0.0), src_h - 1.0)
        r0 = int(math.floor(pr))
        r1 = min(r0 + 1, src_h - 1)
        fr = pr - r0
        for c in range(target_w):
            pc = (c + 0.5) * src_w / target_w - 0.5
            pc = min(max(pc, 0.0), src_w - 1.0)
            c0 = int(math.floor(pc))
            c1 = min(c0 + 1, src_w - 1)
            fc = pc - c0
            top = arr[r0, c0] * (1 - fc) + arr[r0, c1] * fc
            bot = arr[r1, c0] * (1 - fc) + arr[r1, c1] * fc
            out[r, c] = top * (1 - fr) + bot * fr
    return out


# ---------------------------------------------------------------- upsampling


def test_upsample_constant_map():
    out = upsample_map(np.full((1, 1), 5.0), 4, 4)
    assert out.shape == (4, 4)
    np.testing.assert_array_equal(out, np.full((4, 4), 5.0))


def test_upsample_two_by_two_ramp():
    arr = np.array([[0.0, 0.0], [1.0, 1.0]])
    out = upsample_map(arr, 4, 4)
    # Half-pixel centers land at source rows 0, 0.25, 0.75, 1.
    expected = np.array([0.0, 0.25, 0.75, 1.0])[:, None] * np.ones((1, 4))
    np.testing.assert_allclose(out, expected, atol=1e-15)
    # Constant along columns, nondecreasing down the rows.
    assert (np.diff(out, axis=0) >= 0).all()
    assert np.ptp(out, axis=1).max() == 0.0


def test_upsample_identity_when_dims_match():
    rng = np.random.default_rng(3)
    arr = rng.uniform(0, 4, size=(5, 6))
    out = upsample_map(arr, 5, 6)
    np.testing.assert_array_equal(out, arr)
    out[0, 0] = 99.0
    assert arr[0, 0] != 99.0  # must be a copy, not a view


def test_upsample_matches_naive_loop():
    rng = np.random.default_rng(11)
    for _ in range(8):
        arr = rng.uniform(-2, 5, size=(5, 7))
        out = upsample_map(arr, 13, 11)
        np.testing.assert_allclose(out, naive_bilinear(arr, 13, 11), rtol=1e-12)


def test_upsample_output_range_contained():
    rng = np.random.default_rng(12)
    for _ in range(10):
        arr = rng.uniform(0, 10, size=(4, 4))
        out = upsample_map(arr, 17, 23)
        assert out.min() >= arr.min() - 1e-12
        assert out.max() <= arr.max() + 1e-12


def test_upsample_accepts_hierarchy_map():
    hmap = HierarchyScoreMap(level=2, scores=np.ones((3, 3)))
    out = upsample_map(hmap, 6, 6)
    np.testing.assert_array_equal(out, np.ones((6, 6)))


def test_upsample_rejects_bad_targets():
    arr = np.ones((3, 3))
    with pytest.raises(ValueError):
        upsample_map(arr, 0, 4)
    with pytest.raises(ValueError):
        upsample_map(arr, 4, -1)
    with pytest.raises(ValueError):
        upsample_map(arr, 2, 4)  # shrink not supported
    with pytest.raises(ValueError):
        upsample_map(np.ones(5), 6, 6)


# -------------------------------------------------------------------- fusion


def test_fuse_single_map_is_identity():
    arr = np.arange(6.0).reshape(2, 3)
    out = fuse_hierarchies([arr])
    np.testing.assert_array_equal(out, arr)
    out[0, 0] = -1.0
    assert arr[0, 0] == 0.0


def test_fuse_pointwise_product():
    a = np.array([[2.0, 3.0]])
    b = np.array([[4.0, 5.0]])
    np.testing.assert_array_equal(fuse_hierarchies([a, b]), [[8.0, 15.0]])


def test_fuse_zero_annihilates():
    rng = np.random.default_rng(5)
    arr = rng.uniform(1, 9, size=(4, 4))
    out = fuse_hierarchies([arr, np.zeros((4, 4))])
    np.testing.assert_array_equal(out, np.zeros((4, 4)))


def test_fuse_commutative_and_associative():
    rng = np.random.default_rng(6)
    a, b, c = (rng.uniform(0.1, 3, size=(5, 5)) for _ in range(3))
    ab_c = fuse_hierarchies([fuse_hierarchies([a, b]), c])
    a_bc = fuse_hierarchies([a, fuse_hierarchies([b, c])])
    np.testing.assert_allclose(ab_c, a_bc, rtol=1e-12)
    np.testing.assert_allclose(
        fuse_hierarchies([a, b, c]), fuse_hierarchies([c, a, b]), rtol=1e-12
    )


def test_fuse_rejects_mismatch_and_empty():
    with pytest.raises(ValueError):
        fuse_hierarchies([np.ones((2, 2)), np.ones((2, 3))])
    with pytest.raises(ValueError):
        fuse_hierarchies([])


# ----------------------------------------------------------------- smoothing


def test_smooth_constant_map_unchanged():
    arr = np.full((20, 20), 3.25)
    for sigma in (0.5, 1.0, 4.0):
        out = gaussian_smooth(arr, sigma)
        np.testing.assert_allclose(out, arr, atol=1e-6)


def test_smooth_sigma_zero_identity():
    rng = np.random.default_rng(7)
    arr = rng.uniform(0, 2, size=(9, 9))
    out = gaussian_smooth(arr, 0.0)
    np.testing.assert_array_equal(out, arr)
    out[0, 0] = 42.0
    assert arr[0, 0] != 42.0


def test_smooth_impulse_matches_separable_kernel():
    sigma = 4.0
    radius = math.ceil(3 * sigma)
    arr = np.zeros((33, 33))
    arr[16, 16] = 1.0
    out = gaussian_smooth(arr, sigma)

    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kern = np.exp(-0.5 * (x / sigma) ** 2)
    kern /= kern.sum()
    expected = np.zeros((33, 33))
    expected[16 - radius : 16 + radius + 1, 16 - radius : 16 + radius + 1] = np.outer(
        kern, kern
    )
    np.testing.assert_allclose(out, expected, atol=1e-12)
    np.testing.assert_allclose(out[16, 16], kern[radius] ** 2, rtol=1e-10)
    assert abs(out.sum() - 1.0) < 1e-6


def test_smooth_keeps_nonnegative():
    rng = np.random.default_rng(8)
    for trial in range(5):
        arr = rng.uniform(0, 1, size=(15, 15)) ** 3
        out = gaussian_smooth(arr, 2.0)
        assert (out >= 0).all()


def test_smooth_rejects_negative_sigma():
    with pytest.raises(ValueError):
        gaussian_smooth(np.ones((3, 3)), -0.1)


# ------------------------------------------------------------------ finalize


def test_finalize_identity_composition():
    rng = np.random.default_rng(9)
    scores = rng.uniform(0, 5, size=(8, 8))
    hmap = HierarchyScoreMap(level=2, scores=scores)
    amap = finalize([hmap], 8, 8, sigma=0.0)
    np.testing.assert_array_equal(amap.scores, scores)
    assert amap.image_score == scores.max()


def test_finalize_constant_maps_multiply():
    maps = [
        HierarchyScoreMap(level=2, scores=np.full((4, 4), 2.0)),
        HierarchyScoreMap(level=3, scores=np.full((2, 2), 3.0)),
    ]
    amap = finalize(maps, 8, 8, sigma=1.0)
    np.testing.assert_allclose(amap.scores, np.full((8, 8), 6.0), atol=1e-6)
    np.testing.assert_allclose(amap.image_score, 6.0, atol=1e-6)


def test_finalize_monotone_in_each_hierarchy():
    rng = np.random.default_rng(10)
    base = [rng.uniform(0, 2, size=(4, 4)) for _ in range(2)]
    bumped = [base[0] + rng.uniform(0, 1, size=(4, 4)), base[1]]
    # sigma=0 exposes the fused product before smoothing.
    low = finalize([HierarchyScoreMap(level=i + 2, scores=s) for i, s in enumerate(base)], 16, 16, sigma=0.0)
    high = finalize([HierarchyScoreMap(level=i + 2, scores=s) for i, s in enumerate(bumped)], 16, 16, sigma=0.0)
    assert (high.scores >= low.scores - 1e-12).all()


def test_finalize_image_score_is_exact_max():
    rng = np.random.default_rng(13)
    maps = [HierarchyScoreMap(level=2, scores=rng.uniform(0, 3, size=(6, 6)))]
    amap = finalize(maps, 24, 24, sigma=1.5)
    assert amap.image_score == amap.scores.max()


def test_finalize_outlier_dominates_median():
    # End-to-end fixture: one far-off feature row in an otherwise uniform map
    # must push the image score well past the typical pixel.
    rng = np.random.default_rng(14)
    chw = rng.normal(0, 0.05, size=(8, 16, 16)) + 1.0
    chw[:, 5, 9] = 8.0
    fmap = FeatureMap(level=2, data=chw.astype(np.float32))
    config = RegressionConfig(m=1, k=10, eta=5.0, jitter=1e-4)
    support = sample_global_support(fmap, config.k)
    hmap = score_map_for_hierarchy(fmap, support, config)
    amap = finalize([hmap], 64, 64, sigma=2.0)
    assert amap.image_score > 10.0 * np.median(amap.scores)


def test_finalize_requires_maps():
    with pytest.raises(ValueError):
        finalize([], 8, 8, sigma=1.0)


def test_anomaly_map_validation():
    with pytest.raises(ValueError):
        AnomalyMap(scores=np.ones(4), image_score=1.0)
    with pytest.raises(ValueError):
        AnomalyMap(scores=np.array([[1.0, np.nan]]), image_score=1.0)
    with pytest.raises(ValueError):
        AnomalyMap(scores=np.array([[-0.5, 1.0]]), image_score=1.0)


# ----------------------------------------------------------------- rendering


def test_render_constant_map_single_color(tmp_path):
    amap = AnomalyMap(scores=np.full((5, 5), 2.0), image_score=2.0)
    out = tmp_path / "flat.png"
    render_heatmap(amap, out)
    img = np.asarray(Image.open(out).convert("RGB"))
    assert img.shape == (5, 5, 3)
    assert len(np.unique(img.reshape(-1, 3), axis=0)) == 1


def test_render_two_value_map_colors(tmp_path):
    scores = np.zeros((4, 4))
    scores[1, 2] = 1.0
    amap = AnomalyMap(scores=scores, image_score=1.0)
    out = tmp_path / "two.png"
    render_heatmap(amap, out)
    img = np.asarray(Image.open(out).convert("RGB"))
    assert len(np.unique(img.reshape(-1, 3), axis=0)) == 2
    # Ramp top is the warm end, ramp bottom the cool end.
    hot = img[1, 2]
    cold = img[0, 0]
    assert hot[0] > hot[2] and cold[2] > cold[0]


def test_render_byte_identical(tmp_path):
    rng = np.random.default_rng(15)
    scores = rng.uniform(0, 9, size=(12, 12))
    amap = AnomalyMap(scores=scores, image_score=float(scores.max()))
    first = tmp_path / "a.png"
    second = tmp_path / "b.png"
    render_heatmap(amap, first)
    render_heatmap(amap, second)
    assert first.read_bytes() == second.read_bytes()
