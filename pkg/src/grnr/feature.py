"""Image preprocessing, backbone feature extraction, and the `.fmap` dump format.

Feature maps can come from two sources: a TorchScript backbone exported with
named per-hierarchy outputs, or a precomputed `.fmap` dump. Dumps let the
whole pipeline run without any neural-network dependency.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import BackendError, ConfigError, FormatError, InputError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

FMAP_MAGIC = b"GRNRFMP1"
_HEADER = struct.Struct("<I")        # hierarchy count
_MAP_HEADER = struct.Struct("<IIII")  # level, C, H, W


@dataclass(frozen=True)
class ImageTensor:
    """Preprocessed image: channel-normalized float tensor [3][crop][crop]."""

    data: np.ndarray
    source_path: str = ""

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ValueError(f"expected [3][H][W] tensor, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("image tensor contains non-finite values")


@dataclass(frozen=True)
class FeatureMap:
    """One hierarchy of patch features, shape [C][H][W]."""

    level: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"expected [C][H][W] tensor, got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValueError(f"feature map has empty dimension: {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("feature map contains non-finite values")
        # Normalize memory layout so equal-valued maps score bit-identically
        # regardless of how the producer laid them out.
        object.__setattr__(self, "data", np.ascontiguousarray(self.data))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class FeatureStack:
    """Ordered per-hierarchy feature maps for one image."""

    maps: tuple[FeatureMap, ...]
    hierarchy_ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        object.__setattr__(self, "hierarchy_ids", tuple(self.hierarchy_ids))
        if len(self.maps) != len(self.hierarchy_ids):
            raise ValueError("maps and hierarchy_ids length mismatch")
        ids = self.hierarchy_ids
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError(f"hierarchy_ids must be strictly increasing, got {ids}")


@dataclass(frozen=True)
class BackboneHandle:
    """A TorchScript model file plus the output names to read, one per hierarchy.

    The model must return a dict mapping each output name to a [N][C][H][W]
    tensor. By convention exported backbones name them "level<i>".
    """

    model_path: str
    output_names: tuple[str, ...] = ()

    def names_for(self, hierarchy_ids: tuple[int, ...]) -> tuple[str, ...]:
        if self.output_names:
            if len(self.output_names) != len(hierarchy_ids):
                raise ConfigError(
                    f"{len(self.output_names)} output names for "
                    f"{len(hierarchy_ids)} hierarchies"
                )
            return self.output_names
        return tuple(f"level{i}" for i in hierarchy_ids)


def load_image(path: str | Path) -> Image.Image:
    """Decode an image file to RGB, raising InputError on undecodable data."""
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from exc


def preprocess_image(
    raw_image,
    resize: int = 320,
    crop: int = 256,
    mean: tuple[float, float, float] = IMAGENET_MEAN,
    std: tuple[float, float, float] = IMAGENET_STD,
    source_path: str = "",
) -> ImageTensor:
    """Square-resize (bilinear), center-crop, and channel-normalize an RGB image.

    Accepts a PIL image or an [H][W][3] uint8 array. Output value for channel c
    is (v/255 - mean[c]) / std[c], laid out as [3][crop][crop].
    """
    if crop < 1 or resize < 1:
        raise ConfigError(f"resize and crop must be >= 1, got {resize}, {crop}")
    if crop > resize:
        raise ConfigError(f"crop {crop} exceeds resize {resize}")
    if any(s <= 0 for s in std):
        raise ConfigError(f"std components must be > 0, got {std}")
    if isinstance(raw_image, np.ndarray):
        if raw_image.size == 0:
            raise InputError("empty image array")
        raw_image = Image.fromarray(raw_image.astype(np.uint8), mode="RGB")
    elif not isinstance(raw_image, Image.Image):
        raise InputError(f"unsupported image input of type {type(raw_image).__name__}")

    resized = raw_image.convert("RGB").resize((resize, resize), Image.BILINEAR)
    top = (resize - crop) // 2
    cropped = resized.crop((top, top, top + crop, top + crop))

    arr = np.asarray(cropped, dtype=np.float32) / 255.0
    mean_arr = np.asarray(mean, dtype=np.float32)
    std_arr = np.asarray(std, dtype=np.float32)
    arr = (arr - mean_arr) / std_arr
    return ImageTensor(data=arr.transpose(2, 0, 1).copy(), source_path=source_path)


def extract_features(
    image: ImageTensor,
    backbone: BackboneHandle,
    hierarchy_ids: tuple[int, ...] = (2, 3),
) -> FeatureStack:
    """Run the backbone on a preprocessed image and collect the named outputs.

    Deterministic for a fixed input and model file (inference is pinned to a
    single thread). Outputs are stored as float32 maps.
    """
    hierarchy_ids = tuple(hierarchy_ids)
    names = backbone.names_for(hierarchy_ids)
    outputs = _run_torchscript(backbone.model_path, image.data)
    maps = []
    for level, name in zip(hierarchy_ids, names):
        if name not in outputs:
            raise ConfigError(
                f"model {backbone.model_path} has no output '{name}' "
                f"(available: {sorted(outputs)})"
            )
        arr = outputs[name]
        if arr.ndim == 4:
            arr = arr[0]
        maps.append(FeatureMap(level=level, data=np.ascontiguousarray(arr, dtype=np.float32)))
    return FeatureStack(maps=tuple(maps), hierarchy_ids=hierarchy_ids)


def _run_torchscript(model_path: str, chw: np.ndarray) -> dict[str, np.ndarray]:
    try:
        import torch
    except ImportError as exc:
        raise BackendError(
            "running a backbone model requires torch (install the 'backbone' extra); "
            "precomputed .fmap dumps need no backend"
        ) from exc
    if not Path(model_path).is_file():
        raise ConfigError(f"model file not found: {model_path}")
    try:
        torch.set_num_threads(1)
        model = torch.jit.load(model_path, map_location="cpu")
        model.eval()
        with torch.no_grad():
            out = model(torch.from_numpy(np.ascontiguousarray(chw[None], dtype=np.float32)))
    except (ConfigError, BackendError):
        raise
    except Exception as exc:
        raise BackendError(f"backbone inference failed: {exc}") from exc
    if not isinstance(out, dict):
        raise BackendError(
            f"model must return a dict of named outputs, got {type(out).__name__}"
        )
    return {str(k): v.numpy() for k, v in out.items()}


def save_feature_stack(stack: FeatureStack, path: str | Path) -> None:
    """Write a stack in the `.fmap` binary format (little-endian, f32 payload)."""
    if not stack.maps:
        raise FormatError("cannot save a feature stack with no hierarchies")
    blob = bytearray()
    blob += FMAP_MAGIC
    blob += _HEADER.pack(len(stack.maps))
    for level, fmap in zip(stack.hierarchy_ids, stack.maps):
        c, h, w = fmap.data.shape
        blob += _MAP_HEADER.pack(level, c, h, w)
        blob += np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_feature_stack(path: str | Path) -> FeatureStack:
    """Read a `.fmap` file back into a FeatureStack, validating structure."""
    raw = Path(path).read_bytes()
    if raw[: len(FMAP_MAGIC)] != FMAP_MAGIC:
        raise FormatError(f"{path}: bad magic, not a .fmap file")
    off = len(FMAP_MAGIC)
    if len(raw) < off + _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    (count,) = _HEADER.unpack_from(raw, off)
    off += _HEADER.size
    if count < 1:
        raise FormatError(f"{path}: hierarchy count must be >= 1, got {count}")
    maps, ids = [], []
    for _ in range(count):
        if len(raw) < off + _MAP_HEADER.size:
            raise FormatError(f"{path}: truncated map header")
        level, c, h, w = _MAP_HEADER.unpack_from(raw, off)
        off += _MAP_HEADER.size
        need = 4 * c * h * w
        if len(raw) < off + need:
            raise FormatError(
                f"{path}: truncated payload, expected {off + need} bytes, have {len(raw)}"
            )
        data = np.frombuffer(raw, dtype="<f4", count=c * h * w, offset=off).reshape(c, h, w)
        off += need
        try:
            maps.append(FeatureMap(level=level, data=data.copy()))
        except ValueError as exc:
            raise FormatError(f"{path}: invalid map payload: {exc}") from exc
        ids.append(level)
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes after last map")
    try:
        return FeatureStack(maps=tuple(maps), hierarchy_ids=tuple(ids))
    except ValueError as exc:
        raise FormatError(f"{path}: inconsistent hierarchy ids: {exc}") from exc


class BackboneSource:
    """Feature source that preprocesses image files and runs a backbone."""

    def __init__(
        self,
        backbone: BackboneHandle,
        hierarchy_ids: tuple[int, ...] = (2, 3),
        resize: int = 320,
        crop: int = 256,
        mean: tuple[float, float, float] = IMAGENET_MEAN,
        std: tuple[float, float, float] = IMAGENET_STD,
    ):
        self.backbone = backbone
        self.hierarchy_ids = tuple(hierarchy_ids)
        self.resize = resize
        self.crop = crop
        self.mean = mean
        self.std = std

    def features_for(self, image_path: str | Path) -> FeatureStack:
        img = load_image(image_path)
        tensor = preprocess_image(
            img, self.resize, self.crop, self.mean, self.std, source_path=str(image_path)
        )
        return extract_features(tensor, self.backbone, self.hierarchy_ids)


class DumpSource:
    """Feature source reading precomputed `.fmap` dumps.

    By default the dump sits next to the image (`x.png` -> `x.fmap`). With
    `root` set, dumps live in a mirror tree under that root: the image path
    relative to `base` (or just the file name when no base applies), with the
    suffix swapped.
    """

    def __init__(self, root: str | Path | None = None, base: str | Path | None = None):
        self.root = Path(root) if root is not None else None
        self.base = Path(base) if base is not None else None

    def dump_path(self, image_path: str | Path) -> Path:
        image_path = Path(image_path)
        if self.root is None:
            return image_path.with_suffix(".fmap")
        rel = image_path.name
        if self.base is not None:
            try:
                rel = image_path.resolve().relative_to(self.base.resolve())
            except ValueError:
                rel = image_path.name
        return (self.root / rel).with_suffix(".fmap")

    def features_for(self, image_path: str | Path) -> FeatureStack:
        path = self.dump_path(image_path)
        if not path.is_file():
            raise InputError(f"no feature dump for {image_path} (looked at {path})")
        return load_feature_stack(path)
