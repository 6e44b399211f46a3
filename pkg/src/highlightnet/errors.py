"""Exception types raised across the package."""


class HighlightNetError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(HighlightNetError, ValueError):
    """An argument has the wrong shape, range or type."""


class InvalidStateError(HighlightNetError, RuntimeError):
    """Internal state (weights, optimizer buffers) is inconsistent."""


class NotFoundError(HighlightNetError, FileNotFoundError):
    """A required file or directory holds no usable data."""


class CorruptCheckpointError(HighlightNetError):
    """Checkpoint bytes failed structural or checksum validation."""


class UnsupportedVersionError(HighlightNetError):
    """Checkpoint was written with a format version this reader cannot load."""


class TrackingLostError(HighlightNetError):
    """The tracked template left the frame."""


class NonFiniteLossError(HighlightNetError, FloatingPointError):
    """Training produced a NaN or Inf value."""
