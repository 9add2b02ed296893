"""Reference fixtures: a deterministic test image and `.fmap` feature dumps.

The `.fmap` container (shared with the detection package, written here
independently so the two implementations check each other):

    8 bytes  magic "GRNRFMP1"
    u32 LE   map count (>= 1)
    per map: u32 LE level, channels, height, width,
             then channels*height*width float32 LE, [c][h][w] order
    maps ordered by strictly increasing level
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .export import NORMALIZATION

FMAP_MAGIC = b"GRNRFMP1"
_COUNT = struct.Struct("<I")
_MAP_HEADER = struct.Struct("<IIII")


class InputError(ValueError):
    """An input file exists but cannot be used (undecodable image, etc.)."""


def write_fmap(path: str | Path, maps) -> Path:
    """maps: iterable of (level, float array [C][H][W]) with increasing levels."""
    maps = [(int(level), np.asarray(data, dtype=np.float32)) for level, data in maps]
    if not maps:
        raise ValueError("need at least one map to write")
    levels = [level for level, _ in maps]
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be strictly increasing, got {levels}")
    blob = bytearray()
    blob += FMAP_MAGIC
    blob += _COUNT.pack(len(maps))
    for level, data in maps:
        if data.ndim != 3:
            raise ValueError(f"expected [C][H][W] array, got shape {data.shape}")
        c, h, w = data.shape
        blob += _MAP_HEADER.pack(level, c, h, w)
        blob += np.ascontiguousarray(data).astype("<f4").tobytes()
    path = Path(path)
    path.write_bytes(bytes(blob))
    return path


def read_fmap(path: str | Path) -> list[tuple[int, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != FMAP_MAGIC:
        raise ValueError(f"{path}: not a feature dump (bad magic)")
    off = 8
    (count,) = _COUNT.unpack_from(raw, off)
    off += _COUNT.size
    if count < 1:
        raise ValueError(f"{path}: empty dump")
    maps = []
    for _ in range(count):
        if off + _MAP_HEADER.size > len(raw):
            raise ValueError(f"{path}: truncated header")
        level, c, h, w = _MAP_HEADER.unpack_from(raw, off)
        off += _MAP_HEADER.size
        nbytes = c * h * w * 4
        if off + nbytes > len(raw):
            raise ValueError(f"{path}: truncated payload")
        data = np.frombuffer(raw, dtype="<f4", count=c * h * w, offset=off)
        maps.append((int(level), data.reshape(c, h, w).copy()))
        off += nbytes
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return maps


def make_fixture_image(out_path: str | Path, size: int = 320, seed: int = 0) -> Path:
    """Deterministic textured RGB image: three sinusoid gratings at different
    angles per channel, plus seeded speckle so features are not degenerate."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    channels = []
    for freq, angle in ((9.0, 0.3), (13.0, 1.2), (5.0, 2.1)):
        wave = np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy))
        channel = 0.5 + 0.3 * wave + rng.normal(0.0, 0.04, size=wave.shape)
        channels.append(np.clip(channel, 0.0, 1.0))
    rgb = np.round(np.stack(channels, axis=2) * 255.0).astype(np.uint8)
    out_path = Path(out_path)
    Image.fromarray(rgb, mode="RGB").save(str(out_path), format="PNG")
    return out_path


def preprocess(image_path: str | Path, resize: int = 320, crop: int = 256) -> np.ndarray:
    """Bilinear square resize, center crop, channel normalization; the same
    geometry the detection pipeline applies. Returns float32 [3][crop][crop]."""
    if crop > resize:
        raise ValueError(f"crop {crop} exceeds resize {resize}")
    try:
        with Image.open(image_path) as img:
            rgb = img.convert("RGB")
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise InputError(f"cannot decode image {image_path}: {exc}") from exc
    rgb = rgb.resize((resize, resize), resample=Image.Resampling.BILINEAR)
    top = (resize - crop) // 2
    rgb = rgb.crop((top, top, top + crop, top + crop))
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    mean = np.asarray(NORMALIZATION["mean"], dtype=np.float32)
    std = np.asarray(NORMALIZATION["std"], dtype=np.float32)
    arr = (arr - mean) / std
    return arr.transpose(2, 0, 1).copy()


def dump_fixture(
    model_path: str | Path,
    image_path: str | Path,
    out_path: str | Path,
    resize: int = 320,
    crop: int = 256,
) -> Path:
    """Run the exported backbone on one image and write the features as `.fmap`."""
    import torch

    tensor = preprocess(image_path, resize=resize, crop=crop)
    if not Path(model_path).is_file():
        raise FileNotFoundError(f"no exported model at {model_path}")
    try:
        model = torch.jit.load(str(model_path), map_location="cpu")
    except Exception as exc:
        raise RuntimeError(f"cannot load exported model {model_path}: {exc}") from exc
    model.eval()
    torch.set_num_threads(1)
    try:
        with torch.no_grad():
            out = model(torch.from_numpy(tensor)[None])
    except Exception as exc:
        raise RuntimeError(f"backbone inference failed: {exc}") from exc
    if not isinstance(out, dict):
        raise RuntimeError(f"exported model returned {type(out).__name__}, expected dict")

    maps = []
    for name, value in out.items():
        if not name.startswith("level"):
            raise RuntimeError(f"unexpected output name {name!r}")
        level = int(name[len("level"):])
        maps.append((level, value[0].numpy().astype(np.float32)))
    maps.sort(key=lambda pair: pair[0])
    return write_fmap(out_path, maps)
