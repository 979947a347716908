"""Exception taxonomy shared across the package."""


class HypermilError(Exception):
    """Base class for all package errors."""


class ShapeError(HypermilError):
    """Operand shapes are incompatible for the attempted operation."""


class NumericalError(HypermilError):
    """A computation produced NaN, or a gradient is not finite."""


class GeometryError(HypermilError):
    """Degenerate input to a hyperbolic-geometry formula (origin point,
    coincident points). Callers must pre-filter or skip."""


class EmptyBagError(HypermilError):
    """A bag, region, or aggregation input has no elements."""


class FormatError(HypermilError):
    """Base class for binary file-format errors; carries a stable code."""

    code = "format"


class BadMagicError(FormatError):
    code = "bad_magic"


class VersionError(FormatError):
    code = "version_mismatch"


class TruncatedPayloadError(FormatError):
    code = "truncated"


class PayloadLengthError(FormatError):
    code = "payload_length"


class ConfigError(HypermilError):
    """Malformed or unknown configuration keys/values."""


class SplitError(HypermilError):
    """Split plan cannot be constructed as requested."""


class MetricError(HypermilError):
    """Metric undefined for the given inputs (e.g. single-class AUC)."""


class TrainingError(HypermilError):
    """Training run violated a hard invariant (too many skipped steps)."""
