"""End-to-end orchestration: features in, anomaly map out, with stage timings."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from .core import RegressionConfig, sample_global_support, score_map_for_hierarchy
from .feature import FeatureStack
from .postproc import AnomalyMap, finalize


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the detector needs besides the feature source."""

    regression: RegressionConfig = field(default_factory=RegressionConfig)
    sigma: float = 4.0
    resize: int = 320
    crop: int = 256
    workers: int = 1

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.crop > self.resize:
            raise ValueError(f"crop {self.crop} exceeds resize {self.resize}")

    @property
    def effective_workers(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)


@dataclass(frozen=True)
class DetectionResult:
    anomaly_map: AnomalyMap
    timings: dict[str, float]  # stage -> seconds


def detect_stack(stack: FeatureStack, config: PipelineConfig) -> DetectionResult:
    """Score every hierarchy of a feature stack and fuse into one anomaly map."""
    timings = {"sample_global": 0.0, "regression": 0.0, "postproc": 0.0}
    hierarchy_maps = []
    for fmap in stack.maps:
        t0 = time.perf_counter()
        support = sample_global_support(fmap, config.regression.k)
        t1 = time.perf_counter()
        hierarchy_maps.append(
            score_map_for_hierarchy(
                fmap, support, config.regression, workers=config.effective_workers
            )
        )
        t2 = time.perf_counter()
        timings["sample_global"] += t1 - t0
        timings["regression"] += t2 - t1
    t3 = time.perf_counter()
    anomaly_map = finalize(hierarchy_maps, config.crop, config.crop, config.sigma)
    timings["postproc"] = time.perf_counter() - t3
    return DetectionResult(anomaly_map=anomaly_map, timings=timings)


def detect_image(source, image_path, config: PipelineConfig) -> DetectionResult:
    """Run the full pipeline on one image file via any feature source
    (backbone, dump, or stand-in)."""
    t0 = time.perf_counter()
    stack = source.features_for(image_path)
    t_extract = time.perf_counter() - t0
    result = detect_stack(stack, config)
    timings = dict(result.timings)
    timings["extract"] = t_extract
    return DetectionResult(anomaly_map=result.anomaly_map, timings=timings)
