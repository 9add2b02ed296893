"""Dataset indexing and metric computation for MVTec-style category folders.

Layout expected under <root>/<category>:
    test/good/*.png              defect-free images, label 0
    test/<defect>/*.png          defective images, label 1
    ground_truth/<defect>/<stem>_mask.png

Pixel metrics pool every pixel of every test image in the category; image
metrics use the per-image score (map maximum). Ground-truth masks go through
the same resize + center-crop geometry as the images, with nearest-neighbor
interpolation so labels stay binary.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.stats import rankdata

from .errors import DatasetError, FormatError, MetricError
from .pipeline import PipelineConfig, detect_image

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


@dataclass(frozen=True)
class Sample:
    image_path: str
    mask_path: str | None
    defect_label: str
    image_label: int

    def __post_init__(self):
        if self.image_label not in (0, 1):
            raise ValueError(f"image_label must be 0 or 1, got {self.image_label}")
        if (self.image_label == 0) != (self.defect_label == "good"):
            raise ValueError(
                f"label {self.image_label} inconsistent with folder "
                f"{self.defect_label!r}"
            )
        if self.image_label == 1 and self.mask_path is None:
            raise ValueError(f"defective sample {self.image_path} has no mask")


@dataclass(frozen=True)
class DatasetIndex:
    category: str
    samples: tuple[Sample, ...]
    warning_count: int = 0

    def __post_init__(self):
        if not self.samples:
            raise DatasetError(f"category {self.category!r} indexed zero samples")


@dataclass(frozen=True)
class MetricsReport:
    category: str
    pixel_auroc: float
    image_auroc: float
    pixel_f1: float
    f1_threshold: float
    per_image_ms: float
    sample_count: int

    def __post_init__(self):
        for name in ("pixel_auroc", "image_auroc", "pixel_f1"):
            v = getattr(self, name)
            # NaN slips through here on purpose; serialization rejects it
            # with a pointer to the offending field.
            if math.isfinite(v) and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if math.isfinite(self.per_image_ms) and self.per_image_ms <= 0:
            raise ValueError(f"per_image_ms must be positive, got {self.per_image_ms}")
        if self.sample_count < 1:
            raise ValueError(f"sample_count must be >= 1, got {self.sample_count}")


def load_mvtec_layout(root, category: str) -> DatasetIndex:
    """Index one category folder. Missing masks and empty categories are
    errors; unknown nested directories are skipped but counted."""
    root = Path(root)
    test_dir = root / category / "test"
    if not test_dir.is_dir():
        raise DatasetError(f"no test/ directory under {root / category}")
    gt_dir = root / category / "ground_truth"

    samples = []
    warnings = 0
    for defect_dir in sorted(test_dir.iterdir()):
        if not defect_dir.is_dir():
            warnings += 1
            continue
        defect = defect_dir.name
        for entry in sorted(defect_dir.iterdir()):
            if entry.is_dir():
                warnings += 1
                continue
            if entry.suffix.lower() not in _IMAGE_SUFFIXES:
                warnings += 1
                continue
            if defect == "good":
                samples.append(Sample(str(entry), None, defect, 0))
            else:
                mask = gt_dir / defect / f"{entry.stem}_mask.png"
                if not mask.is_file():
                    raise DatasetError(
                        f"missing ground-truth mask {mask} for {entry}"
                    )
                samples.append(Sample(str(entry), str(mask), defect, 1))
    if not samples:
        raise DatasetError(f"category {category!r} has no test images under {test_dir}")
    return DatasetIndex(category=category, samples=tuple(samples), warning_count=warnings)


def _validate_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores shape {s.shape} != labels shape {y.shape}")
    if s.size == 0:
        raise ValueError("empty score array")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    y = y.astype(np.int64)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError(
            f"metric undefined with single-class labels "
            f"({n_pos} positive, {n_neg} negative)"
        )
    return s, y, n_pos, n_neg


def auroc(scores, labels) -> float:
    """Area under the ROC curve via average ranks; ties get half credit."""
    s, y, n_pos, n_neg = _validate_binary(scores, labels)
    ranks = rankdata(s, method="average")
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1_best_threshold(scores, labels) -> tuple[float, float]:
    """Best F1 over thresholds drawn from the distinct score values, where a
    sample is predicted positive when score >= threshold. Returns
    (best_f1, threshold); ties on F1 resolve to the highest threshold."""
    s, y, n_pos, _ = _validate_binary(scores, labels)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    tp_cum = np.cumsum(y_sorted)
    # last index of each distinct value: predictions at threshold s_sorted[i]
    # are exactly the first i+1 entries of the descending sort
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp = tp_cum[last].astype(np.float64)
    predicted_pos = (last + 1).astype(np.float64)
    precision = tp / predicted_pos
    recall = tp / n_pos
    denom = precision + recall
    f1 = np.where(denom > 0, 2.0 * precision * recall / np.maximum(denom, 1e-300), 0.0)
    best = int(np.argmax(f1))  # first max = highest threshold
    return float(f1[best]), float(s_sorted[last[best]])


def _load_mask(path, resize: int, crop: int) -> np.ndarray:
    """Binary ground-truth mask pushed through the image geometry."""
    with Image.open(path) as img:
        mask = img.convert("L")
        mask = mask.resize((resize, resize), resample=Image.Resampling.NEAREST)
    top = (resize - crop) // 2
    arr = np.asarray(mask, dtype=np.uint8)[top:top + crop, top:top + crop]
    return (arr > 127).astype(np.uint8)


def evaluate_category(index: DatasetIndex, source, config: PipelineConfig) -> MetricsReport:
    """Detect every sample in the index and aggregate pixel + image metrics."""
    pixel_scores = []
    pixel_labels = []
    image_scores = []
    image_labels = []
    elapsed = []
    for sample in index.samples:
        try:
            t0 = time.perf_counter()
            result = detect_image(source, sample.image_path, config)
            elapsed.append(time.perf_counter() - t0)
            amap = result.anomaly_map
            if sample.image_label == 0:
                mask = np.zeros(amap.scores.shape, dtype=np.uint8)
            else:
                mask = _load_mask(sample.mask_path, config.resize, config.crop)
            if mask.shape != amap.scores.shape:
                raise DatasetError(
                    f"mask shape {mask.shape} != map shape {amap.scores.shape}"
                )
            pixel_scores.append(amap.scores.ravel())
            pixel_labels.append(mask.ravel())
            image_scores.append(amap.image_score)
            image_labels.append(sample.image_label)
        except Exception as exc:
            if str(sample.image_path) in str(exc):
                raise
            raise type(exc)(f"while evaluating {sample.image_path}: {exc}") from exc

    pixel_scores = np.concatenate(pixel_scores)
    pixel_labels = np.concatenate(pixel_labels)
    pixel_f1, threshold = f1_best_threshold(pixel_scores, pixel_labels)
    return MetricsReport(
        category=index.category,
        pixel_auroc=auroc(pixel_scores, pixel_labels),
        image_auroc=auroc(image_scores, image_labels),
        pixel_f1=pixel_f1,
        f1_threshold=threshold,
        per_image_ms=float(np.mean(elapsed) * 1000.0),
        sample_count=len(index.samples),
    )


_REPORT_FIELDS = [f.name for f in fields(MetricsReport)]


def _check_finite(report: MetricsReport):
    for name in _REPORT_FIELDS:
        v = getattr(report, name)
        if isinstance(v, float) and not math.isfinite(v):
            raise FormatError(f"report field {name} is not finite: {v}")


def write_report(report: MetricsReport, path, fmt: str | None = None):
    """Serialize one report as JSON (fresh file) or CSV (appends a row,
    writing the header only when the file starts empty)."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "json"
    if fmt not in ("json", "csv"):
        raise ValueError(f"unknown report format {fmt!r}")
    _check_finite(report)
    row = {name: getattr(report, name) for name in _REPORT_FIELDS}
    if fmt == "json":
        path.write_text(json.dumps(row, indent=2) + "\n")
        return
    new_file = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_REPORT_FIELDS)
        if new_file:
            writer.writeheader()
        writer.writerow(row)


def mean_report(reports) -> MetricsReport:
    """Aggregate row across categories: unweighted mean of each metric."""
    if not reports:
        raise ValueError("no reports to aggregate")
    return MetricsReport(
        category="mean",
        pixel_auroc=float(np.mean([r.pixel_auroc for r in reports])),
        image_auroc=float(np.mean([r.image_auroc for r in reports])),
        pixel_f1=float(np.mean([r.pixel_f1 for r in reports])),
        f1_threshold=float(np.mean([r.f1_threshold for r in reports])),
        per_image_ms=float(np.mean([r.per_image_ms for r in reports])),
        sample_count=int(sum(r.sample_count for r in reports)),
    )
