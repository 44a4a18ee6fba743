"""Shared exception types.

Every anticipated failure mode raises a distinct subclass of ClawError so
callers (and the fuzz tests) can tell protocol garbage from misuse from
corrupted files without string matching.
"""


class ClawError(Exception):
    """Base class for all clawlink errors."""


class RangeError(ClawError):
    """A numeric input is outside its documented domain."""


class FormatError(ClawError):
    """Wire bytes do not start with a valid frame (bad magic)."""


class IncompleteError(ClawError):
    """Wire bytes end before the declared frame does."""


class VersionError(ClawError):
    """Frame or file declares an unsupported version."""


class SizeError(ClawError):
    """Declared or actual payload exceeds the hard size cap."""


class ConfigError(ClawError):
    """Invalid configuration value or reference to an unknown entity."""


class ModelError(ClawError):
    """A physical model is ill-posed (e.g. ungrounded lattice)."""


class ProjectionError(ClawError):
    """A marker cannot be projected (non-positive depth in camera frame)."""

    def __init__(self, message: str, marker_index: int | None = None):
        super().__init__(message)
        self.marker_index = marker_index


class InsufficientDataError(ClawError):
    """Not enough samples for the requested fit or statistic."""


class DegenerateDataError(ClawError):
    """Samples carry no usable variation (e.g. identical displacements)."""


class ShapeError(ClawError):
    """Array or marker-set dimensions do not match the model."""


class InconsistentSampleError(ClawError):
    """A clock sample implies a negative round-trip delay."""


class CorruptFileError(ClawError):
    """An episode or model file failed structural or checksum validation."""

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class OverlapError(ClawError):
    """Two episodes share no common time range."""
