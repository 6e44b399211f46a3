"""Low-light image enhancement with per-pixel gamma curves, trained from scratch."""

from .enhancer import EnhanceConfig, ModelWeights, enhance
from .errors import (
    CorruptCheckpointError,
    HighlightNetError,
    InvalidArgumentError,
    InvalidStateError,
    NonFiniteLossError,
    NotFoundError,
    TrackingLostError,
    UnsupportedVersionError,
)

__version__ = "0.1.0"

__all__ = [
    "EnhanceConfig", "ModelWeights", "enhance",
    "CorruptCheckpointError", "HighlightNetError", "InvalidArgumentError", "InvalidStateError",
    "NonFiniteLossError", "NotFoundError", "TrackingLostError", "UnsupportedVersionError",
]
