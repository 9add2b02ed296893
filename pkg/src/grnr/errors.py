"""Exception types shared across the package.

Plain argument mistakes (bad dimensions, out-of-range indices) raise the
builtin ValueError; everything that maps to a CLI exit code gets its own
class here.
"""


class GrnrError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GrnrError):
    """Invalid configuration (e.g. crop larger than resize, bad output name)."""


class InputError(GrnrError):
    """Unusable input data, such as an undecodable image."""


class FormatError(GrnrError):
    """Malformed `.fmap` file or other structured payload."""


class BackendError(GrnrError):
    """Failure inside the neural-network backend; carries the backend message."""


class NumericalError(GrnrError):
    """Numerically unsolvable system (singular Gram with jitter = 0)."""


class DatasetError(GrnrError):
    """Dataset layout problems: missing masks, empty test sets."""


class MetricError(GrnrError):
    """Metric is undefined for the given inputs (e.g. single-class labels)."""
