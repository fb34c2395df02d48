"""Incremental token-drop state machine.

One engine instance consumes temporal steps in order, compares each step
only against its immediate predecessor, and maintains the drop-ratio
timeline, trigger events, and the budgeted FIFO token memory bank.
Pushes must be externally serialized (single writer); all outputs are
immutable snapshots.
"""

from __future__ import annotations

import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import redundancy
from .errors import ConfigError, SequenceError
from .geometry import GridGeometry, PatchGrid, token_coords
from .redundancy import (
    DropMask,
    SimilarityField,
    SlimTokenStream,
    TokenGrid,
    apply_mask,
    drop_ratio,
    frame_aware_mask,
    threshold_mask,
    video_aware_masks,
)

def _max_workers() -> int:
    """Parallelism bound for data-parallel batch work (env DTD_THREADS)."""
    env = os.environ.get("DTD_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"DTD_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise ConfigError("DTD_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


MODE_PIXEL_THRESHOLD = "pixel-threshold"
MODE_FEATURE_THRESHOLD = "feature-threshold"
MODE_FRAME_AWARE = "frame-aware"
MODE_VIDEO_AWARE = "video-aware"
MODES = (
    MODE_PIXEL_THRESHOLD,
    MODE_FEATURE_THRESHOLD,
    MODE_FRAME_AWARE,
    MODE_VIDEO_AWARE,
)


@dataclass(frozen=True)
class EngineConfig:
    mode: str = MODE_FEATURE_THRESHOLD
    tau_pixel: float = 0.05
    tau_feat: float = 0.25
    target_ratio: Optional[float] = None
    trigger_threshold: float = 0.60
    trigger_min_gap: int = 2
    memory_budget: int = 6144
    min_keep_per_step: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not (0.0 < self.trigger_threshold <= 1.0):
            raise ConfigError("trigger_threshold must be in (0, 1]")
        if self.trigger_min_gap < 1:
            raise ConfigError("trigger_min_gap must be >= 1")
        if self.memory_budget < 0:
            raise ConfigError("memory_budget must be >= 0")
        if self.min_keep_per_step < 0:
            raise ConfigError("min_keep_per_step must be >= 0")
        if self.tau_pixel < 0:
            raise ConfigError("tau_pixel must be >= 0")
        if not (-1.0 <= self.tau_feat <= 1.0):
            raise ConfigError("tau_feat must be within [-1, 1]")
        if self.mode in (MODE_FRAME_AWARE, MODE_VIDEO_AWARE):
            if self.target_ratio is None:
                raise ConfigError(f"mode {self.mode} requires target_ratio")
            if not (0.0 <= self.target_ratio <= 1.0):
                raise ConfigError("target_ratio must be in [0, 1]")


@dataclass(frozen=True)
class TimelineEntry:
    step: int
    wall_time: float
    drop_ratio: float
    retained: int
    total: int
    is_trigger: bool


@dataclass(frozen=True)
class TriggerEvent:
    step: int
    wall_time: float
    drop_ratio: float


@dataclass(frozen=True)
class StepOutput:
    step: int
    mask: DropMask
    fragment: SlimTokenStream
    entry: TimelineEntry
    trigger: Optional[TriggerEvent]


class MemoryBank:
    """FIFO store of per-step slim fragments under a token budget.

    Eviction removes the oldest whole-step fragments first. A single
    fragment larger than the budget is truncated to its most recent
    tokens and the event is recorded in ``warnings``.
    """

    def __init__(self, budget: int, dim: int):
        self.budget = budget
        self.dim = dim
        self.queue: deque[SlimTokenStream] = deque()
        self.occupancy = 0
        self.warnings: list[str] = []

    def push(self, fragment: SlimTokenStream) -> None:
        if len(fragment) > self.budget:
            keep = len(fragment) - self.budget
            self.warnings.append(
                f"step fragment of {len(fragment)} tokens exceeds budget "
                f"{self.budget}; truncated to newest {self.budget}"
            )
            fragment = SlimTokenStream(
                dim=fragment.dim,
                positions=fragment.positions[keep:],
                embeddings=fragment.embeddings[keep:],
                source_steps=fragment.source_steps,
            )
        self.queue.append(fragment)
        self.occupancy += len(fragment)
        while self.occupancy > self.budget:
            evicted = self.queue.popleft()
            self.occupancy -= len(evicted)

    def snapshot(self) -> SlimTokenStream:
        """Concatenated surviving fragments, oldest first."""
        return SlimTokenStream.concat(list(self.queue), dim=self.dim)


def pseudo_features(patches: PatchGrid) -> TokenGrid:
    """Stand-in embeddings for pixel modes: mean pixel per channel per cell.

    Documented convention letting pipelines without an external encoder
    still emit slim token streams; D equals the channel count.
    """
    geom = patches.geom
    m = geom.spatial_merge
    th, tw = geom.token_height, geom.token_width
    # reduce the large per-patch sample axis first (einsum avoids the slow
    # strided reduce), then average the handful of patches a cell owns
    arr = patches.patches.reshape(
        geom.temporal_patch, geom.patch_grid_height, geom.patch_grid_width, -1, geom.channels
    )
    per_patch = np.einsum("tghpc->tghc", arr) / arr.shape[3]
    cell_mean = per_patch.reshape(
        geom.temporal_patch, th, m, tw, m, geom.channels
    ).mean(axis=(0, 2, 4), dtype=np.float64)
    return TokenGrid.from_array(patches.step, cell_mean.astype(np.float32))


def _enforce_min_keep(mask: DropMask, field: SimilarityField, min_keep: int) -> DropMask:
    """Un-drop the least-similar dropped cells until min_keep are retained."""
    if min_keep <= 0:
        return mask
    total = mask.total
    want = min(min_keep, total)
    kept = total - mask.dropped
    if kept >= want:
        return mask
    flat_scores = field.scores.ravel().astype(np.float64)
    if field.kind == redundancy.FEATURE:
        informative = np.argsort(flat_scores, kind="stable")  # smallest cosine first
    else:
        informative = np.argsort(-flat_scores, kind="stable")  # largest distance first
    bits = mask.bits.ravel().copy()
    for idx in informative:
        if kept >= want:
            break
        if bits[idx]:
            bits[idx] = False
            kept += 1
    return DropMask(step=mask.step, bits=bits.reshape(mask.bits.shape))


class StreamEngine:
    """Single-writer incremental engine over one video stream."""

    def __init__(self, config: EngineConfig, geom: GridGeometry):
        if config.mode == MODE_VIDEO_AWARE:
            # kept constructible for run_batch, but push() rejects it
            pass
        self.config = config
        self.geom = geom
        self._next_step = 0
        self._prev_patches: Optional[PatchGrid] = None
        self._prev_tokens: Optional[TokenGrid] = None
        self._timeline: list[TimelineEntry] = []
        self._triggers: list[TriggerEvent] = []
        self._last_trigger_step: Optional[int] = None
        self._bank: Optional[MemoryBank] = None
        self._coords_template = token_coords(geom)

    @property
    def timeline(self) -> list[TimelineEntry]:
        return list(self._timeline)

    @property
    def triggers(self) -> list[TriggerEvent]:
        return list(self._triggers)

    @property
    def bank_warnings(self) -> list[str]:
        return list(self._bank.warnings) if self._bank else []

    @property
    def memory_occupancy(self) -> int:
        return self._bank.occupancy if self._bank else 0

    def _needs_pixels(self) -> bool:
        return self.config.mode == MODE_PIXEL_THRESHOLD

    def _needs_features(self) -> bool:
        return self.config.mode == MODE_FEATURE_THRESHOLD

    def _field(
        self, patches: Optional[PatchGrid], tokens: Optional[TokenGrid]
    ) -> SimilarityField:
        # ranked mode prefers the feature signal when both inputs are present
        if self.config.mode == MODE_PIXEL_THRESHOLD or (
            tokens is None and patches is not None
        ):
            return redundancy.pixel_similarity(self._prev_patches, patches)
        return redundancy.feature_similarity(self._prev_tokens, tokens)

    def _mask_for(self, field: SimilarityField) -> DropMask:
        cfg = self.config
        if cfg.mode == MODE_PIXEL_THRESHOLD:
            mask = threshold_mask(field, cfg.tau_pixel)
        elif cfg.mode == MODE_FEATURE_THRESHOLD:
            mask = threshold_mask(field, cfg.tau_feat)
        elif cfg.mode == MODE_FRAME_AWARE:
            mask = frame_aware_mask(field, cfg.target_ratio)
        else:
            raise ConfigError("video-aware mode needs the whole video; use run_batch")
        return _enforce_min_keep(mask, field, cfg.min_keep_per_step)

    def push(
        self,
        patches: Optional[PatchGrid] = None,
        tokens: Optional[TokenGrid] = None,
    ) -> StepOutput:
        cfg = self.config
        if cfg.mode == MODE_VIDEO_AWARE:
            raise ConfigError("video-aware mode needs the whole video; use run_batch")
        if patches is None and tokens is None:
            raise ConfigError("push requires a PatchGrid or TokenGrid")
        if self._needs_pixels() and patches is None:
            raise ConfigError(f"mode {cfg.mode} requires pixel (PatchGrid) input")
        if self._needs_features() and tokens is None:
            raise ConfigError(f"mode {cfg.mode} requires feature (TokenGrid) input")
        declared = tokens.step if tokens is not None else patches.step
        if declared != self._next_step:
            raise SequenceError(
                f"expected step {self._next_step}, got {declared}"
            )
        step = self._next_step

        if tokens is None:
            tokens = pseudo_features(patches)
        if (tokens.height, tokens.width) != (self.geom.token_height, self.geom.token_width):
            raise ConfigError(
                f"token lattice ({tokens.height}, {tokens.width}) does not match "
                f"geometry ({self.geom.token_height}, {self.geom.token_width})"
            )

        if step == 0:
            mask = DropMask(
                step=0,
                bits=np.zeros((self.geom.token_height, self.geom.token_width), dtype=bool),
            )
        else:
            field = self._field(patches, tokens)
            mask = self._mask_for(field)

        return self._finish_step(step, mask, patches, tokens)

    def _finish_step(
        self,
        step: int,
        mask: DropMask,
        patches: Optional[PatchGrid],
        tokens: TokenGrid,
    ) -> StepOutput:
        cfg = self.config
        positions = [p.at_step(step) for p in self._coords_template]
        fragment = apply_mask(tokens, positions, mask)
        if self._bank is None:
            self._bank = MemoryBank(cfg.memory_budget, dim=tokens.dim)
        self._bank.push(fragment)

        ratio = drop_ratio(mask)
        wall_time = step * self.geom.step_seconds
        trigger = None
        if (
            step > 0
            and ratio < cfg.trigger_threshold
            and (
                self._last_trigger_step is None
                or step - self._last_trigger_step >= cfg.trigger_min_gap
            )
        ):
            trigger = TriggerEvent(step=step, wall_time=wall_time, drop_ratio=ratio)
            self._triggers.append(trigger)
            self._last_trigger_step = step

        entry = TimelineEntry(
            step=step,
            wall_time=wall_time,
            drop_ratio=ratio,
            retained=mask.total - mask.dropped,
            total=mask.total,
            is_trigger=trigger is not None,
        )
        self._timeline.append(entry)
        self._prev_patches = patches
        self._prev_tokens = tokens
        self._next_step += 1
        return StepOutput(step=step, mask=mask, fragment=fragment, entry=entry, trigger=trigger)

    def memory_snapshot(self) -> SlimTokenStream:
        """Current FIFO bank contents, oldest surviving step first."""
        if self._bank is None:
            return SlimTokenStream(dim=0)
        return self._bank.snapshot()


def run_batch(
    config: EngineConfig,
    geom: GridGeometry,
    patch_steps: Optional[Sequence[PatchGrid]] = None,
    token_steps: Optional[Sequence[TokenGrid]] = None,
) -> list[StepOutput]:
    """Whole-video path; also the only way to run video-aware selection.

    For threshold and frame-aware modes the result is bit-identical to
    sequential push() calls.
    """
    n = len(token_steps) if token_steps is not None else len(patch_steps or [])
    if n < 1:
        raise ConfigError("run_batch requires at least one step")

    if config.mode != MODE_VIDEO_AWARE:
        eng = StreamEngine(config, geom)
        outs = []
        for i in range(n):
            outs.append(
                eng.push(
                    patches=patch_steps[i] if patch_steps is not None else None,
                    tokens=token_steps[i] if token_steps is not None else None,
                )
            )
        return outs

    # video-aware: compute all similarity fields, rank globally, then replay
    workers = _max_workers()
    if token_steps is None:
        token_steps = [pseudo_features(p) for p in patch_steps]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fields = list(
                pool.map(
                    redundancy.pixel_similarity, patch_steps[:-1], patch_steps[1:]
                )
            )
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fields = list(
                pool.map(
                    redundancy.feature_similarity, token_steps[:-1], token_steps[1:]
                )
            )
    masks = video_aware_masks(fields, config.target_ratio)
    masks = [_enforce_min_keep(m, f, config.min_keep_per_step) for m, f in zip(masks, fields)]

    eng = StreamEngine(config, geom)
    outs = []
    for i in range(n):
        if i == 0:
            mask = DropMask(
                step=0, bits=np.zeros((geom.token_height, geom.token_width), dtype=bool)
            )
        else:
            mask = masks[i - 1]
        outs.append(
            eng._finish_step(
                i,
                mask,
                patch_steps[i] if patch_steps is not None else None,
                token_steps[i],
            )
        )
    return outs


def latency_bound(config: EngineConfig, geom: GridGeometry) -> float:
    """Worst-case staleness of the memory bank head vs the newest frame.

    One temporal step must complete before its tokens exist, so the bound
    is the step granularity in seconds. The deployment figure of 2 s
    corresponds to fps=1 with temporal_patch=2; this is reported, not
    enforced.
    """
    return math.ceil(geom.temporal_patch) / geom.fps
