"""Export utility: truncated wide residual backbone plus reference feature dumps."""

from .export import ExportManifest, SUPPORTED_LEVELS, export_backbone
from .fixtures import (
    InputError,
    dump_fixture,
    make_fixture_image,
    preprocess,
    read_fmap,
    write_fmap,
)

__version__ = "0.1.0"

__all__ = [
    "ExportManifest",
    "InputError",
    "SUPPORTED_LEVELS",
    "dump_fixture",
    "export_backbone",
    "make_fixture_image",
    "preprocess",
    "read_fmap",
    "write_fmap",
]
