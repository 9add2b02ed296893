"""Zero-shot texture anomaly detection by regressing each patch feature from
its spatial neighborhood under a global-normality pull, scoring the residual."""

from .core import (
    GlobalSupport,
    HierarchyScoreMap,
    LocalSupport,
    Query,
    RegressionConfig,
    Transformation,
    neighbor_offsets,
    regression_objective,
    sample_global_support,
    sample_local_support,
    score_map_for_hierarchy,
    solve_transformation,
)
from .errors import (
    BackendError,
    ConfigError,
    DatasetError,
    FormatError,
    GrnrError,
    InputError,
    MetricError,
    NumericalError,
)
from .eval import (
    DatasetIndex,
    MetricsReport,
    Sample,
    auroc,
    evaluate_category,
    f1_best_threshold,
    load_mvtec_layout,
    write_report,
)
from .feature import (
    BackboneHandle,
    BackboneSource,
    DumpSource,
    FeatureMap,
    FeatureStack,
    ImageTensor,
    extract_features,
    load_feature_stack,
    load_image,
    preprocess_image,
    save_feature_stack,
)
from .pipeline import DetectionResult, PipelineConfig, detect_image, detect_stack
from .postproc import (
    AnomalyMap,
    finalize,
    fuse_hierarchies,
    gaussian_smooth,
    render_heatmap,
    upsample_map,
)

__version__ = "0.1.0"

__all__ = [
    "AnomalyMap",
    "BackboneHandle",
    "BackboneSource",
    "DatasetIndex",
    "DetectionResult",
    "DumpSource",
    "FeatureMap",
    "FeatureStack",
    "GlobalSupport",
    "HierarchyScoreMap",
    "ImageTensor",
    "LocalSupport",
    "MetricsReport",
    "PipelineConfig",
    "Query",
    "RegressionConfig",
    "Sample",
    "Transformation",
    "auroc",
    "detect_image",
    "detect_stack",
    "evaluate_category",
    "extract_features",
    "f1_best_threshold",
    "finalize",
    "fuse_hierarchies",
    "gaussian_smooth",
    "load_feature_stack",
    "load_image",
    "load_mvtec_layout",
    "neighbor_offsets",
    "preprocess_image",
    "regression_objective",
    "render_heatmap",
    "sample_global_support",
    "sample_local_support",
    "save_feature_stack",
    "score_map_for_hierarchy",
    "solve_transformation",
    "upsample_map",
    "write_report",
    "GrnrError",
    "ConfigError",
    "InputError",
    "FormatError",
    "BackendError",
    "NumericalError",
    "DatasetError",
    "MetricError",
]
