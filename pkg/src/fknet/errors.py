"""Exception types raised on contract violations."""


class FkError(Exception):
    """Base class for all engine errors."""


class ShapeError(FkError, ValueError):
    """Tensor extents incompatible with the requested operation."""


class RangeError(FkError, ValueError):
    """Index or window outside the valid range."""


class ConfigError(FkError, ValueError):
    """Invalid configuration value."""


class StateError(FkError, RuntimeError):
    """Operation called in the wrong state, e.g. backward without a cached forward."""


class FormatError(FkError, ValueError):
    """Malformed binary file (bad magic, bad version, truncation)."""


class DataConsistencyError(FormatError):
    """Companion data files disagree, e.g. image/label counts."""


class CheckpointMismatchError(FkError, ValueError):
    """Checkpoint entries incompatible with the target network."""
