"""Build and save a truncated wide residual backbone with named outputs.

The exported file is a scripted module whose forward returns a dict mapping
"level<i>" to the feature tensor after residual stage i. Stage i has stride
2^(i+1), so a 256 input yields 32x32 at level 2 and 16x16 at level 3.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torchvision.models import Wide_ResNet50_2_Weights, wide_resnet50_2

SUPPORTED_LEVELS = (1, 2, 3, 4)

# Channel-normalization constants the detection pipeline applies before the
# backbone; recorded in the manifest so consumers preprocess identically.
NORMALIZATION = {
    "mean": [0.485, 0.456, 0.406],
    "std": [0.229, 0.224, 0.225],
}


@dataclass
class ExportManifest:
    model_file: str
    output_names: list[str]
    input_size: int
    normalization: dict[str, list[float]]
    fixture_image: str | None = None
    fixture_dump: str | None = None

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "ExportManifest":
        return cls(**json.loads(Path(path).read_text()))


class _TruncatedBackbone(torch.nn.Module):
    """Stem plus the first residual stages, emitting the requested levels."""

    def __init__(self, net, levels: tuple[int, ...]):
        super().__init__()
        self.stem = torch.nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        stages = [net.layer1, net.layer2, net.layer3, net.layer4]
        self.stages = torch.nn.ModuleList(stages[: max(levels)])
        self.levels = levels

    def forward(self, x):
        x = self.stem(x)
        out = {}
        for i, stage in enumerate(self.stages, start=1):
            x = stage(x)
            if i in self.levels:
                out[f"level{i}"] = x
        return out


def _validate_levels(levels) -> tuple[int, ...]:
    levels = tuple(int(v) for v in levels)
    if not levels:
        raise ValueError("need at least one level to export")
    if len(set(levels)) != len(levels):
        raise ValueError(f"duplicate levels: {levels}")
    bad = [v for v in levels if v not in SUPPORTED_LEVELS]
    if bad:
        raise ValueError(f"unsupported levels {bad}; supported: {SUPPORTED_LEVELS}")
    return tuple(sorted(levels))


def _build_network(weights: str, seed: int):
    if weights == "random":
        torch.manual_seed(seed)
        return wide_resnet50_2(weights=None)
    if weights != "pretrained":
        raise ValueError(f"weights must be 'pretrained' or 'random', got {weights!r}")
    try:
        return wide_resnet50_2(weights=Wide_ResNet50_2_Weights.IMAGENET1K_V1)
    except OSError as exc:
        raise ConnectionError(f"cannot fetch pretrained weights: {exc}") from exc


def export_backbone(
    levels,
    out_model: str | Path,
    out_manifest: str | Path | None = None,
    weights: str = "pretrained",
    seed: int = 0,
    input_size: int = 256,
    fixture_image: str | None = None,
    fixture_dump: str | None = None,
) -> ExportManifest:
    """Trace the truncated backbone and save it with a JSON manifest.

    weights="random" initializes from the given torch seed instead of
    downloading pretrained weights; fixtures built from it are fully
    reproducible offline.
    """
    levels = _validate_levels(levels)
    if input_size < 64:
        raise ValueError(f"input_size too small to reach level 4: {input_size}")
    net = _build_network(weights, seed)
    trunk = _TruncatedBackbone(net, levels).eval()

    torch.set_num_threads(1)
    example = torch.zeros(1, 3, input_size, input_size)
    with torch.no_grad():
        traced = torch.jit.trace(trunk, example, strict=False)
    out_model = Path(out_model)
    traced.save(str(out_model))

    manifest = ExportManifest(
        model_file=str(out_model),
        output_names=[f"level{i}" for i in levels],
        input_size=input_size,
        normalization=dict(NORMALIZATION),
        fixture_image=fixture_image,
        fixture_dump=fixture_dump,
    )
    if out_manifest is not None:
        manifest.write(out_manifest)
    return manifest
