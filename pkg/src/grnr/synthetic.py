"""Seeded synthetic textures and a lightweight feature stand-in.

Used by the self-contained benchmark suite: periodic textures (sinusoids and
checkerboards with amplitude noise) with an injected out-of-distribution
blotch, plus a fixed-seed random-convolution feature extractor that mimics a
two-hierarchy backbone (strides 8 and 16) without any neural-network
dependency.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from .feature import FeatureMap, FeatureStack, load_image

BLOTCH_CATEGORY = "blotch"


def make_texture(size: int, kind: str, rng: np.random.Generator) -> np.ndarray:
    """One grayscale periodic texture in [0, 1] with 5% amplitude noise.

    Pattern periods are kept at 4 or 8 pixels so they divide the stand-in
    extractor's strides: every feature-grid cell then sees the same pattern
    phase, the per-image feature distribution stays unimodal, and only the
    injected defect is atypical. Phases, offsets, and contrast levels are
    randomized per image.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == "sinusoid":
        period = float(rng.choice([4.0, 8.0]))
        axis = int(rng.integers(0, 2))
        phase = rng.uniform(0.0, 2.0 * np.pi)
        coord = xx if axis == 0 else yy
        pattern = 0.5 + 0.3 * np.sin(2.0 * np.pi * coord / period + phase)
        amplitude = 0.6
    elif kind == "checker":
        cell = 4
        off_y, off_x = rng.integers(0, cell, size=2)
        lo = rng.uniform(0.15, 0.35)
        hi = rng.uniform(0.65, 0.85)
        tiles = ((yy + off_y) // cell + (xx + off_x) // cell) % 2
        pattern = lo + (hi - lo) * tiles
        amplitude = hi - lo
    else:
        raise ValueError(f"unknown texture kind: {kind}")
    noisy = pattern + rng.normal(0.0, 0.05 * amplitude, size=pattern.shape)
    return np.clip(noisy, 0.0, 1.0)


def inject_blotch(
    texture: np.ndarray, rng: np.random.Generator, blotch: int = 16, block: int = 4
) -> tuple[np.ndarray, np.ndarray]:
    """Replace one blotch x blotch square with blockwise uniform noise;
    returns (defective texture, binary mask).

    Noise is drawn per block x block cell rather than per pixel so the defect
    keeps energy at scales the extractor kernels do not average away.
    """
    size = texture.shape[0]
    if blotch >= size:
        raise ValueError(f"blotch {blotch} does not fit in {size}x{size} texture")
    if blotch % block:
        raise ValueError(f"blotch {blotch} not divisible by block {block}")
    margin = blotch // 2
    top = int(rng.integers(margin, size - blotch - margin + 1))
    left = int(rng.integers(margin, size - blotch - margin + 1))
    cells = rng.uniform(0.0, 1.0, (blotch // block, blotch // block))
    patch = np.kron(cells, np.ones((block, block)))
    out = texture.copy()
    out[top : top + blotch, left : left + blotch] = patch
    mask = np.zeros_like(texture, dtype=np.uint8)
    mask[top : top + blotch, left : left + blotch] = 1
    return out, mask


def to_rgb(texture: np.ndarray) -> np.ndarray:
    """Grayscale [0,1] float -> [H][W][3] uint8."""
    gray = np.round(np.clip(texture, 0.0, 1.0) * 255.0).astype(np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2)


class RandomConvFeatures:
    """Fixed-seed random-projection patch features at backbone-like strides.

    Each hierarchy takes overlapping patches (kernel = 2 * stride, periodic
    padding) and projects them through a frozen Gaussian matrix. The linear
    projection keeps shifted copies of a periodic pattern in a low-rank
    subspace, so repeating texture stays mutually reconstructable. Serves as
    a deterministic backbone stand-in for tests and synthetic benchmarks.
    """

    def __init__(
        self,
        seed: int = 0,
        hierarchy_ids: tuple[int, ...] = (2, 3),
        strides: tuple[int, ...] | None = None,
        channels: tuple[int, ...] | None = None,
        resize: int | None = None,
        crop: int | None = None,
    ):
        hierarchy_ids = tuple(hierarchy_ids)
        if strides is None:
            # backbone-like downsampling: hierarchy i maps to stride 2^(i+1)
            strides = tuple(2 ** (i + 1) for i in hierarchy_ids)
        if channels is None:
            channels = tuple(12 * 2 ** i for i in hierarchy_ids)
        if not (len(hierarchy_ids) == len(strides) == len(channels)):
            raise ValueError("hierarchy_ids, strides, channels must align")
        if (resize is None) != (crop is None):
            raise ValueError("resize and crop must be given together")
        if resize is not None and crop > resize:
            raise ValueError(f"crop {crop} exceeds resize {resize}")
        self.resize = resize
        self.crop = crop
        self.hierarchy_ids = hierarchy_ids
        self.strides = tuple(strides)
        self.channels = tuple(channels)
        self._banks = []
        for idx, (stride, c_out) in enumerate(zip(strides, channels)):
            kernel = 2 * stride
            rng = np.random.default_rng([seed, idx])
            dim = kernel * kernel * 3
            # Linear projections keep shifted periodic patches in a low-rank
            # subspace, so normal texture stays reconstructable from its
            # neighbors; a squashing nonlinearity here would wreck that.
            weight = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, c_out))
            self._banks.append((kernel, weight))

    def extract(self, rgb: np.ndarray) -> FeatureStack:
        """[H][W][3] uint8 (or [0,1] float) image -> two-hierarchy FeatureStack."""
        img = np.asarray(rgb, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"expected [H][W][3] image, got shape {img.shape}")
        if img.max() > 1.5:
            img = img / 255.0
        size_h, size_w = img.shape[:2]
        maps = []
        for level, stride, (kernel, weight) in zip(
            self.hierarchy_ids, self.strides, self._banks
        ):
            if size_h % stride or size_w % stride:
                raise ValueError(
                    f"image {size_h}x{size_w} not divisible by stride {stride}"
                )
            # Periodic padding: tiled textures stay in-distribution at the
            # image border instead of producing artificial edge features.
            pad = stride // 2
            padded = np.pad(img, ((pad, pad), (pad, pad), (0, 0)), mode="wrap")
            windows = sliding_window_view(padded, (kernel, kernel), axis=(0, 1))
            windows = windows[::stride, ::stride]
            gh, gw = windows.shape[:2]
            patches = windows.reshape(gh * gw, -1)
            feats = patches @ weight
            chw = feats.T.reshape(weight.shape[1], gh, gw).astype(np.float32)
            maps.append(FeatureMap(level=level, data=chw))
        return FeatureStack(maps=tuple(maps), hierarchy_ids=self.hierarchy_ids)

    def features_for(self, image_path: str | Path) -> FeatureStack:
        img = load_image(image_path)
        if self.resize is not None:
            img = img.resize((self.resize, self.resize), Image.BILINEAR)
            top = (self.resize - self.crop) // 2
            img = img.crop((top, top, top + self.crop, top + self.crop))
        return self.extract(np.asarray(img))


def make_suite(
    root: str | Path,
    category: str = "synthetic",
    count: int = 20,
    seed: int = 0,
    image_size: int = 128,
    blotch: int = 16,
) -> Path:
    """Materialize an MVTec-style test layout of synthetic textures.

    `count` defective images (one blotch each, with masks) plus `count` clean
    counterparts under test/good. Fully determined by `seed`.
    """
    root = Path(root)
    good_dir = root / category / "test" / "good"
    bad_dir = root / category / "test" / BLOTCH_CATEGORY
    mask_dir = root / category / "ground_truth" / BLOTCH_CATEGORY
    for d in (good_dir, bad_dir, mask_dir):
        d.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        kind = "sinusoid" if i % 2 == 0 else "checker"
        rng = np.random.default_rng([seed, i])
        clean = make_texture(image_size, kind, rng)
        defective, mask = inject_blotch(make_texture(image_size, kind, rng), rng, blotch)
        Image.fromarray(to_rgb(clean)).save(good_dir / f"{i:03d}.png")
        Image.fromarray(to_rgb(defective)).save(bad_dir / f"{i:03d}.png")
        Image.fromarray(mask * 255).save(mask_dir / f"{i:03d}_mask.png")
    return root / category


def random_feature_stack(
    seed: int = 0,
    shapes: tuple[tuple[int, int, int, int], ...] = ((2, 512, 32, 32), (3, 1024, 16, 16)),
) -> FeatureStack:
    """Random stack at given (level, C, H, W) shapes; the default matches the
    benchmark workload."""
    rng = np.random.default_rng(seed)
    maps = [
        FeatureMap(level=level, data=rng.standard_normal((c, h, w)).astype(np.float32))
        for level, c, h, w in shapes
    ]
    return FeatureStack(maps=tuple(maps), hierarchy_ids=tuple(s[0] for s in shapes))
