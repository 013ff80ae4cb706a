"""Exception hierarchy.

Everything raised on purpose by this package derives from Motility3dError so
the CLI can map failures onto its exit codes (1 usage/config, 2 data,
3 numerics) without catching unrelated bugs.
"""


class Motility3dError(Exception):
    """Base class for all errors raised by motility3d."""


class GeometryError(Motility3dError, ValueError):
    """Invalid tensor shape, channel count, or conv/pool geometry."""


class GraphError(Motility3dError, RuntimeError):
    """Misuse of the autodiff graph (non-scalar loss, consumed graph)."""


class NumericsError(Motility3dError, ArithmeticError):
    """A forward value or loss became NaN/Inf."""


class DegenerateBatchError(Motility3dError, ValueError):
    """Batch norm asked to normalize over fewer than two elements per channel."""


class DataError(Motility3dError):
    """Base class for data-pipeline failures."""


class DecodeError(DataError):
    """Malformed PGM/PPM frame."""


class InsufficientFramesError(DataError):
    """Frame directory holds fewer frames than requested."""


class InconsistentFramesError(DataError):
    """Frames in one clip disagree on resolution."""


class SchemaError(DataError):
    """CSV is missing a required column."""


class TabularParseError(DataError):
    """Non-numeric, non-empty cell in a tabular CSV."""


class DegenerateFeatureError(DataError):
    """A tabular feature has no observed training values."""


class DegenerateClassError(DataError):
    """A class count of zero makes class weights undefined."""


class LabelError(DataError):
    """Class label outside {0, 1, 2}."""


class CheckpointError(Motility3dError):
    """Corrupt, truncated, or wrong-version checkpoint file."""


class ConfigError(Motility3dError):
    """Invalid CLI usage or training configuration."""
