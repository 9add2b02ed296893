"""Fusing per-hierarchy score maps into one image-resolution anomaly map.

Each hierarchy map is bilinearly upsampled to image resolution, the maps are
multiplied elementwise, and the product is Gaussian-smoothed. The image-level
score is the maximum of the smoothed map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter1d

from .core import HierarchyScoreMap


@dataclass(frozen=True)
class AnomalyMap:
    """Image-resolution anomaly scores plus the image-level score (their max)."""

    scores: np.ndarray
    image_score: float

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"anomaly map must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("anomaly map contains non-finite values")
        if (arr < 0).any():
            raise ValueError("anomaly map contains negative values")
        object.__setattr__(self, "scores", arr)


def _axis_weights(src: int, dst: int):
    # Half-pixel-center (corner-aligned-off) source coordinates.
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1.0)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def upsample_map(score_map, target_h: int, target_w: int) -> np.ndarray:
    """Bilinearly interpolate a score map up to (target_h, target_w).

    Accepts a HierarchyScoreMap or a plain 2-D array. Being convex-combining,
    the output range stays within [min, max] of the source.
    """
    arr = score_map.scores if isinstance(score_map, HierarchyScoreMap) else score_map
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D map, got shape {arr.shape}")
    src_h, src_w = arr.shape
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target dims must be >= 1, got {target_h}x{target_w}")
    if target_h < src_h or target_w < src_w:
        raise ValueError(
            f"target {target_h}x{target_w} smaller than source {src_h}x{src_w}"
        )
    if (target_h, target_w) == (src_h, src_w):
        return arr.copy()
    lo_r, hi_r, fr = _axis_weights(src_h, target_h)
    lo_c, hi_c, fc = _axis_weights(src_w, target_w)
    rows = arr[lo_r] * (1.0 - fr)[:, None] + arr[hi_r] * fr[:, None]
    return rows[:, lo_c] * (1.0 - fc)[None, :] + rows[:, hi_c] * fc[None, :]


def fuse_hierarchies(maps: list[np.ndarray]) -> np.ndarray:
    """Elementwise product of same-shaped maps."""
    if not maps:
        raise ValueError("need at least one map to fuse")
    arrays = [np.asarray(m, dtype=np.float64) for m in maps]
    shape = arrays[0].shape
    for i, arr in enumerate(arrays[1:], start=1):
        if arr.shape != shape:
            raise ValueError(f"map {i} has shape {arr.shape}, expected {shape}")
    out = arrays[0].copy()
    for arr in arrays[1:]:
        out *= arr
    return out


def gaussian_smooth(scores: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur: kernel radius ceil(3*sigma), kernel normalized
    to unit sum, edge-duplicating reflect padding. sigma = 0 is the identity."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    arr = np.asarray(scores, dtype=np.float64)
    if sigma == 0:
        return arr.copy()
    radius = math.ceil(3.0 * sigma)
    out = gaussian_filter1d(arr, sigma, axis=0, mode="reflect", radius=radius)
    return gaussian_filter1d(out, sigma, axis=1, mode="reflect", radius=radius)


def finalize(
    maps: list[HierarchyScoreMap],
    image_h: int,
    image_w: int,
    sigma: float = 4.0,
) -> AnomalyMap:
    """Upsample all hierarchy maps to image resolution, fuse by product,
    smooth, and take the max as the image-level score."""
    if not maps:
        raise ValueError("need at least one hierarchy map")
    upsampled = [upsample_map(m, image_h, image_w) for m in maps]
    fused = fuse_hierarchies(upsampled)
    smoothed = gaussian_smooth(fused, sigma)
    # Smoothing a nonnegative map cannot go negative; clip away -0.0 noise.
    smoothed = np.maximum(smoothed, 0.0)
    return AnomalyMap(scores=smoothed, image_score=float(smoothed.max()))


def _jet_lut() -> np.ndarray:
    x = np.linspace(0.0, 1.0, 256)
    r = np.clip(1.5 - np.abs(4.0 * x - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * x - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * x - 1.0), 0.0, 1.0)
    return np.round(np.stack([r, g, b], axis=1) * 255.0).astype(np.uint8)


def render_heatmap(anomaly_map: AnomalyMap, out_path: str | Path) -> None:
    """Write an 8-bit PNG heatmap, jet ramp over min-max normalized scores."""
    arr = anomaly_map.scores
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        norm = (arr - lo) / (hi - lo)
    else:
        norm = np.zeros_like(arr)
    idx = np.round(norm * 255.0).astype(np.uint8)
    rgb = _jet_lut()[idx]
    Image.fromarray(rgb, mode="RGB").save(str(out_path), format="PNG")
