"""Streaming video token reduction.

Patchifies incoming frames, scores temporal redundancy at pixel or feature
level, emits position-preserving drop masks and slim token streams, tracks
the per-step drop-ratio timeline with scene-transition triggers, and keeps
a budgeted FIFO token memory bank.
"""

__version__ = "0.1.0"

from .engine import (
    EngineConfig,
    MemoryBank,
    StepOutput,
    StreamEngine,
    TimelineEntry,
    TriggerEvent,
    latency_bound,
    run_batch,
)
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    InputShapeError,
    IoError,
    SequenceError,
    TokenDropError,
)
from .geometry import (
    GridGeometry,
    PatchGrid,
    Position3D,
    patch_to_token_map,
    patchify,
    token_coords,
    unpatchify,
)
from .redundancy import (
    DropMask,
    SimilarityField,
    SlimTokenStream,
    TokenGrid,
    apply_mask,
    drop_ratio,
    feature_similarity,
    frame_aware_mask,
    pixel_similarity,
    threshold_mask,
    video_aware_masks,
)

__all__ = [
    "__version__",
    "ConfigError", "DataError", "FormatError", "InputShapeError",
    "IoError", "SequenceError", "TokenDropError",
    "GridGeometry", "PatchGrid", "Position3D",
    "patchify", "unpatchify", "token_coords", "patch_to_token_map",
    "TokenGrid", "DropMask", "SimilarityField", "SlimTokenStream",
    "pixel_similarity", "feature_similarity", "threshold_mask",
    "frame_aware_mask", "video_aware_masks", "apply_mask", "drop_ratio",
    "EngineConfig", "StreamEngine", "StepOutput", "MemoryBank",
    "TimelineEntry", "TriggerEvent", "run_batch", "latency_bound",
]
