"""Command line for exporting backbones and producing reference fixtures.

Exit codes: 0 success, 2 bad arguments, 3 input/network/file problems,
4 model or inference failures.
"""

from __future__ import annotations

import argparse
import sys

from .export import SUPPORTED_LEVELS, export_backbone
from .fixtures import InputError, dump_fixture, make_fixture_image


def cmd_export(args) -> int:
    fixture_image = args.fixture_image
    fixture_dump = args.fixture_dump
    if (fixture_image is None) != (fixture_dump is None):
        raise ValueError("--fixture-image and --fixture-dump must be given together")
    if fixture_image is not None:
        make_fixture_image(fixture_image, size=args.resize, seed=args.seed)
    manifest = export_backbone(
        args.levels,
        args.out,
        args.manifest,
        weights=args.weights,
        seed=args.seed,
        input_size=args.crop,
        fixture_image=fixture_image,
        fixture_dump=fixture_dump,
    )
    if fixture_dump is not None:
        dump_fixture(args.out, fixture_image, fixture_dump,
                     resize=args.resize, crop=args.crop)
    print(manifest.model_file)
    return 0


def cmd_dump(args) -> int:
    dump_fixture(args.model, args.image, args.out,
                 resize=args.resize, crop=args.crop)
    print(args.out)
    return 0


def cmd_fixture_image(args) -> int:
    make_fixture_image(args.out, size=args.size, seed=args.seed)
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="backbone-export",
        description="Export a truncated wide residual backbone with named "
                    "per-level outputs, and dump reference feature fixtures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="trace and save the truncated backbone")
    p.add_argument("--levels", type=int, nargs="+", default=[2, 3],
                   help=f"residual stages to expose, from {SUPPORTED_LEVELS}")
    p.add_argument("--out", required=True, help="output model file (.pt)")
    p.add_argument("--manifest", default=None, help="manifest JSON path")
    p.add_argument("--weights", choices=("pretrained", "random"),
                   default="pretrained",
                   help="pretrained downloads weights; random is seeded")
    p.add_argument("--seed", type=int, default=0,
                   help="torch seed for --weights random (default 0)")
    p.add_argument("--resize", type=int, default=320,
                   help="fixture image size / resize edge (default 320)")
    p.add_argument("--crop", type=int, default=256,
                   help="center crop = traced input size (default 256)")
    p.add_argument("--fixture-image", default=None,
                   help="also write a deterministic fixture image here")
    p.add_argument("--fixture-dump", default=None,
                   help="also dump the fixture's features here (.fmap)")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("dump", help="run an exported model, write a .fmap dump")
    p.add_argument("--model", required=True, help="exported model file")
    p.add_argument("--image", required=True, help="input image")
    p.add_argument("--out", required=True, help="output .fmap path")
    p.add_argument("--resize", type=int, default=320)
    p.add_argument("--crop", type=int, default=256)
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("fixture-image", help="write the deterministic test image")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--size", type=int, default=320)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fixture_image)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConnectionError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
