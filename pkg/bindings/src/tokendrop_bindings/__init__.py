"""In-process bindings for embedding the token-drop engine in pipelines.

Construct an engine from a plain config mapping, push numpy arrays, and
receive masks, retained tokens with positions, timeline entries, and
trigger events as plain arrays/records. All returned arrays are copies:
mutating them never affects engine state.

A handle is single-writer; concurrent pushes raise instead of corrupting
state. Distinct handles are fully independent.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, fields
from typing import Any, Mapping, Optional

import numpy as np

import tokendrop
from tokendrop import (
    ConfigError,
    EngineConfig,
    GridGeometry,
    InputShapeError,
    SequenceError,
    StreamEngine,
    TimelineEntry,
    TokenGrid,
    TriggerEvent,
    patchify,
)

__version__ = tokendrop.__version__

__all__ = [
    "BoundEngineHandle",
    "StepResult",
    "bind_create",
    "bind_push",
    "bind_snapshot",
    "bind_timeline",
    "bind_triggers",
    "__version__",
]

_ENGINE_KEYS = {f.name for f in fields(EngineConfig)}
_GEOMETRY_KEYS = {f.name for f in fields(GridGeometry)}


@dataclass(frozen=True)
class StepResult:
    """Copied-out outputs of one pushed temporal step.

    ``mask`` is the (H, W) bool DROP mask; ``positions`` the (N, 3) int64
    (t, h, w) rows of retained tokens; ``embeddings`` the row-aligned
    (N, D) float32 vectors.
    """

    step: int
    mask: np.ndarray
    positions: np.ndarray
    embeddings: np.ndarray
    ratio: float
    trigger: bool


class BoundEngineHandle:
    """Opaque owner of one engine instance plus its config.

    Not shareable across concurrent pushes; overlapping calls raise a
    SequenceError rather than interleave state updates.
    """

    def __init__(self, config: EngineConfig, geom: GridGeometry):
        self.config = config
        self.geometry = geom
        self._engine = StreamEngine(config, geom)
        self._push_lock = threading.Lock()


def bind_create(config: Optional[Mapping[str, Any]] = None) -> BoundEngineHandle:
    """Build a validated engine handle from a config mapping.

    Keys mirror the EngineConfig and GridGeometry fields; unknown keys are
    rejected. An empty (or omitted) mapping yields all defaults, identical
    to the CLI's.
    """
    config = dict(config or {})
    unknown = set(config) - _ENGINE_KEYS - _GEOMETRY_KEYS
    if unknown:
        raise ConfigError(
            "unknown config keys: " + ", ".join(sorted(unknown))
        )
    geom = GridGeometry(**{k: v for k, v in config.items() if k in _GEOMETRY_KEYS})
    cfg = EngineConfig(**{k: v for k, v in config.items() if k in _ENGINE_KEYS})
    return BoundEngineHandle(cfg, geom)


def _as_token_grid(handle: BoundEngineHandle, arr: np.ndarray, step: int) -> TokenGrid:
    if arr.dtype != np.float32:
        raise InputShapeError(
            f"feature input must be float32 (H, W, D), got dtype {arr.dtype}"
        )
    return TokenGrid.from_array(step, arr)


def bind_push(handle: BoundEngineHandle, array: np.ndarray) -> StepResult:
    """Push one temporal step and return its copied-out results.

    Feature modes take a contiguous (H, W, D) float32 grid; pixel modes
    take (frames, height, width, channels) uint8 or float32 with exactly
    ``temporal_patch`` frames. Steps are numbered implicitly in push order.
    """
    if not handle._push_lock.acquire(blocking=False):
        raise SequenceError("concurrent push on a single-writer handle")
    try:
        arr = np.ascontiguousarray(array)
        step = handle._engine._next_step
        geom = handle.geometry
        if arr.ndim == 3:
            out = handle._engine.push(tokens=_as_token_grid(handle, arr, step))
        elif arr.ndim == 4:
            if arr.dtype not in (np.uint8, np.float32):
                raise InputShapeError(
                    "pixel input must be uint8 or float32 "
                    f"(frames, height, width, channels), got dtype {arr.dtype}"
                )
            out = handle._engine.push(patches=patchify(arr, geom, step=step))
        else:
            raise InputShapeError(
                "expected (H, W, D) features or (frames, height, width, "
                f"channels) pixels, got shape {arr.shape}"
            )
    finally:
        handle._push_lock.release()
    return StepResult(
        step=out.step,
        mask=out.mask.bits.copy(),
        positions=out.fragment.positions.copy(),
        embeddings=out.fragment.embeddings.copy(),
        ratio=out.entry.drop_ratio,
        trigger=out.entry.is_trigger,
    )


def bind_snapshot(handle: BoundEngineHandle) -> tuple[np.ndarray, np.ndarray]:
    """(positions, embeddings) copies of the current FIFO memory bank."""
    slim = handle._engine.memory_snapshot()
    return slim.positions.copy(), slim.embeddings.copy()


def bind_timeline(handle: BoundEngineHandle) -> list[TimelineEntry]:
    """Per-step drop-ratio timeline entries, oldest first."""
    return handle._engine.timeline


def bind_triggers(handle: BoundEngineHandle) -> list[TriggerEvent]:
    """Scene-transition trigger events fired so far, oldest first."""
    return handle._engine.triggers
