"""Command-line front door: detection, evaluation, extraction, benchmarking.

Exit codes: 0 success, 2 bad arguments or configuration, 3 I/O or input
format problems, 4 backend/numerical failures, 5 dataset problems.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .core import RegressionConfig
from .errors import (
    BackendError,
    ConfigError,
    DatasetError,
    FormatError,
    InputError,
    MetricError,
    NumericalError,
)
from .eval import (
    _check_finite,
    evaluate_category,
    load_mvtec_layout,
    mean_report,
    write_report,
)
from .feature import (
    BackboneHandle,
    BackboneSource,
    DumpSource,
    FeatureMap,
    FeatureStack,
    load_feature_stack,
    save_feature_stack,
)
from .pipeline import DetectionResult, PipelineConfig, detect_image, detect_stack
from .postproc import render_heatmap
from .synthetic import RandomConvFeatures, random_feature_stack

_STAGES = ("extract", "sample_global", "regression", "postproc")


def _add_common(p: argparse.ArgumentParser):
    g = p.add_argument_group("method parameters")
    g.add_argument("--m", type=int, default=1, help="neighborhood radius (default 1)")
    g.add_argument("--k", type=int, default=40, help="global support size (default 40)")
    g.add_argument("--eta", type=float, default=5.0,
                   help="global regularization strength (default 5)")
    g.add_argument("--sigma", type=float, default=4.0,
                   help="gaussian smoothing std in pixels (default 4)")
    g.add_argument("--jitter", type=float, default=1e-4,
                   help="relative ridge added to the neighbor Gram (default 1e-4)")
    g.add_argument("--resize", type=int, default=320,
                   help="square resize before cropping (default 320)")
    g.add_argument("--crop", type=int, default=256,
                   help="center crop, also the output map size (default 256)")
    g.add_argument("--levels", type=int, nargs="+", default=[2, 3],
                   help="backbone hierarchy levels (default 2 3)")
    g.add_argument("--threads", type=int, default=1,
                   help="worker threads for the regression, 0 = all cores")
    g.add_argument("--seed", type=int, default=0,
                   help="seed for all synthetic randomness (default 0)")


def _add_source_flags(p: argparse.ArgumentParser, with_root: bool = False):
    g = p.add_argument_group("feature source")
    g.add_argument("--model", default=None,
                   help="scripted backbone file (default: $GRNR_MODEL)")
    g.add_argument("--conv-features", action="store_true",
                   help="use the seeded random-convolution feature stand-in")
    if with_root:
        g.add_argument("--features-root", default=None,
                       help="directory tree of precomputed .fmap dumps")


def _pipeline_config(args) -> PipelineConfig:
    regression = RegressionConfig(m=args.m, k=args.k, eta=args.eta, jitter=args.jitter)
    if args.crop > args.resize:
        raise ValueError(f"crop {args.crop} exceeds resize {args.resize}")
    return PipelineConfig(
        regression=regression,
        sigma=args.sigma,
        resize=args.resize,
        crop=args.crop,
        workers=args.threads,
    )


def _feature_source(args, dataset_root=None):
    """Resolve the feature source from flags, or return None if none given."""
    if getattr(args, "features_root", None):
        return DumpSource(args.features_root, base=dataset_root)
    if args.conv_features:
        return RandomConvFeatures(
            seed=args.seed,
            hierarchy_ids=tuple(args.levels),
            resize=args.resize,
            crop=args.crop,
        )
    model = args.model or os.environ.get("GRNR_MODEL")
    if model:
        return BackboneSource(
            BackboneHandle(model_path=model),
            hierarchy_ids=tuple(args.levels),
            resize=args.resize,
            crop=args.crop,
        )
    return None


def cmd_detect(args) -> int:
    config = _pipeline_config(args)
    if args.features:
        t0 = time.perf_counter()
        stack = load_feature_stack(args.features)
        t_extract = time.perf_counter() - t0
        inner = detect_stack(stack, config)
        timings = dict(inner.timings, extract=t_extract)
        result = DetectionResult(anomaly_map=inner.anomaly_map, timings=timings)
    else:
        source = _feature_source(args)
        if source is None:
            raise ValueError(
                "no feature source: pass --model (or set GRNR_MODEL), "
                "--features, or --conv-features"
            )
        result = detect_image(source, args.input, config)
    amap = result.anomaly_map
    render_heatmap(amap, args.out)
    if args.map_out:
        raw = FeatureMap(level=0, data=amap.scores[np.newaxis].astype(np.float32))
        save_feature_stack(FeatureStack(maps=(raw,), hierarchy_ids=(0,)), args.map_out)
    print(amap.image_score)
    return 0


def cmd_extract(args) -> int:
    source = _feature_source(args)
    if source is None:
        raise ValueError("no feature source: pass --model or --conv-features")
    stack = source.features_for(args.input)
    save_feature_stack(stack, args.out)
    print(args.out)
    return 0


def cmd_eval(args) -> int:
    config = _pipeline_config(args)
    root = Path(args.root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    available = sorted(d.name for d in root.iterdir() if (d / "test").is_dir())
    if not available:
        raise DatasetError(f"no categories with a test/ folder under {root}")
    if args.category:
        if args.category not in available:
            raise DatasetError(
                f"unknown category {args.category!r}; available: {', '.join(available)}"
            )
        categories = [args.category]
    else:
        categories = available

    source = _feature_source(args, dataset_root=root)
    if source is None:
        raise ValueError(
            "no feature source: pass --model (or set GRNR_MODEL), "
            "--features-root, or --conv-features"
        )

    reports = []
    for category in categories:
        index = load_mvtec_layout(root, category)
        if index.warning_count:
            print(
                f"warning: skipped {index.warning_count} unrecognized entries "
                f"in {category}",
                file=sys.stderr,
            )
        report = evaluate_category(index, source, config)
        reports.append(report)
        print(
            f"{report.category}: pixel_auroc={report.pixel_auroc:.4f} "
            f"image_auroc={report.image_auroc:.4f} pixel_f1={report.pixel_f1:.4f} "
            f"({report.sample_count} images, {report.per_image_ms:.1f} ms/image)"
        )

    if args.report:
        path = Path(args.report)
        fmt = args.format or ("csv" if path.suffix.lower() == ".csv" else "json")
        if fmt == "csv":
            path.unlink(missing_ok=True)
            for report in reports:
                write_report(report, path, "csv")
            if len(reports) > 1:
                write_report(mean_report(reports), path, "csv")
        elif len(reports) == 1:
            write_report(reports[0], path, "json")
        else:
            all_reports = reports + [mean_report(reports)]
            for report in all_reports:
                _check_finite(report)
            rows = [dict(r.__dict__) for r in all_reports]
            path.write_text(json.dumps(rows, indent=2) + "\n")
    return 0


def cmd_bench(args) -> int:
    if args.iters < 1:
        raise ValueError(f"--iters must be >= 1, got {args.iters}")
    config = _pipeline_config(args)

    def acquire() -> FeatureStack:
        if args.features:
            return load_feature_stack(args.features)
        if args.input:
            source = _feature_source(args)
            if source is None:
                raise ValueError("--input needs --model or --conv-features")
            return source.features_for(args.input)
        return random_feature_stack(seed=args.seed)

    samples = {stage: [] for stage in _STAGES}
    for _ in range(args.iters):
        t0 = time.perf_counter()
        stack = acquire()
        samples["extract"].append(time.perf_counter() - t0)
        result = detect_stack(stack, config)
        for stage in ("sample_global", "regression", "postproc"):
            samples[stage].append(result.timings[stage])

    shape_desc = ", ".join(
        f"L{m.level} {m.data.shape[0]}x{m.data.shape[1]}x{m.data.shape[2]}"
        for m in stack.maps
    )
    print(f"bench: {args.iters} iterations on [{shape_desc}], "
          f"{config.effective_workers} worker(s)")
    totals = np.zeros(args.iters)
    for stage in _STAGES:
        vals = np.asarray(samples[stage]) * 1000.0
        totals += vals
        print(f"stage {stage:<13} median {np.median(vals):8.2f} ms   "
              f"p95 {np.percentile(vals, 95):8.2f} ms")
    print(f"total {'':<13} median {np.median(totals):8.2f} ms   "
          f"p95 {np.percentile(totals, 95):8.2f} ms")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grnr",
        description="Zero-shot texture anomaly detection by neighborhood "
                    "regression with a global-normality regularizer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="score one image, write a heatmap")
    p.add_argument("--input", required=True, help="image file")
    p.add_argument("--out", required=True, help="heatmap PNG path")
    p.add_argument("--map-out", default=None,
                   help="also dump the raw anomaly map as a single-map .fmap")
    p.add_argument("--features", default=None,
                   help="precomputed .fmap dump to score instead of running a model")
    _add_source_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="evaluate dataset categories, emit reports")
    p.add_argument("--root", required=True, help="dataset root directory")
    p.add_argument("--category", default=None, help="restrict to one category")
    p.add_argument("--report", default=None, help="report file (.json or .csv)")
    p.add_argument("--format", choices=("json", "csv"), default=None,
                   help="report format (default: by file extension)")
    _add_source_flags(p, with_root=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract", help="dump backbone features to a .fmap file")
    p.add_argument("--input", required=True, help="image file")
    p.add_argument("--out", required=True, help="output .fmap path")
    _add_source_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("bench", help="time the pipeline stages")
    p.add_argument("--iters", type=int, default=20, help="repetitions (default 20)")
    p.add_argument("--features", default=None, help="benchmark this .fmap dump")
    p.add_argument("--input", default=None, help="benchmark this image file")
    _add_source_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse --help (0) or usage errors (2)
        return exc.code if isinstance(exc.code, int) else 2
    except (ConfigError, MetricError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InputError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (BackendError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
