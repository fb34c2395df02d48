"""Patch/token lattice definitions and pixel patchification.

A *temporal step* groups ``temporal_patch`` consecutive raw frames into one
token-grid time index. Within a step the token lattice is the patch grid
downsampled by ``spatial_merge`` on each side, so one token cell owns
``spatial_merge**2 * temporal_patch`` raw patches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, InputShapeError


@dataclass(frozen=True)
class GridGeometry:
    """Parameters linking raw pixels to token coordinates."""

    input_width: int = 448
    input_height: int = 448
    channels: int = 3
    patch_size: int = 14
    spatial_merge: int = 2
    temporal_patch: int = 2
    fps: float = 1.0

    def __post_init__(self):
        if self.input_width <= 0 or self.input_height <= 0:
            raise ConfigError("input dimensions must be positive")
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if self.patch_size <= 0 or self.spatial_merge <= 0:
            raise ConfigError("patch_size and spatial_merge must be positive")
        if self.temporal_patch < 1:
            raise ConfigError("temporal_patch must be >= 1")
        if not (self.fps > 0):
            raise ConfigError("fps must be positive")
        cell = self.patch_size * self.spatial_merge
        if self.input_width % cell or self.input_height % cell:
            raise ConfigError(
                f"input {self.input_width}x{self.input_height} does not tile "
                f"evenly into {cell}x{cell} token cells (no padding is applied)"
            )

    @property
    def patch_grid_width(self) -> int:
        return self.input_width // self.patch_size

    @property
    def patch_grid_height(self) -> int:
        return self.input_height // self.patch_size

    @property
    def token_width(self) -> int:
        return self.patch_grid_width // self.spatial_merge

    @property
    def token_height(self) -> int:
        return self.patch_grid_height // self.spatial_merge

    @property
    def tokens_per_step(self) -> int:
        return self.token_width * self.token_height

    @property
    def patches_per_step(self) -> int:
        return self.patch_grid_width * self.patch_grid_height * self.temporal_patch

    @property
    def patches_per_token(self) -> int:
        return self.spatial_merge * self.spatial_merge * self.temporal_patch

    @property
    def step_seconds(self) -> float:
        """Wall-clock span covered by one temporal step."""
        return self.temporal_patch / self.fps


@dataclass(frozen=True, order=True)
class Position3D:
    """3D {temporal, height, width} index of a token cell.

    Assigned before any dropping and never re-indexed afterward.
    """

    t: int
    h: int
    w: int

    def at_step(self, t: int) -> "Position3D":
        return Position3D(t, self.h, self.w)


@dataclass
class PatchGrid:
    """Normalized pixel patches for one temporal step.

    ``patches`` has shape (temporal_patch, grid_h, grid_w, patch, patch,
    channels), float32 in [0, 1], frames ordered by time within the step.
    """

    step: int
    geom: GridGeometry
    patches: np.ndarray

    @property
    def patch_count(self) -> int:
        return self.patches.shape[0] * self.patches.shape[1] * self.patches.shape[2]


def _normalize_frame(frame: np.ndarray, geom: GridGeometry) -> np.ndarray:
    arr = np.asarray(frame)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    expected = (geom.input_height, geom.input_width, geom.channels)
    if arr.shape != expected:
        raise InputShapeError(
            f"frame shape {arr.shape} does not match expected {expected}"
        )
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    arr = arr.astype(np.float32, copy=False)
    if not np.isfinite(arr).all():
        raise DataError("frame contains non-finite samples")
    return arr


def patchify(frames: Sequence[np.ndarray], geom: GridGeometry, step: int = 0) -> PatchGrid:
    """Tile ``temporal_patch`` raw frames into a PatchGrid.

    8-bit inputs are divided by 255; float inputs must already be finite
    and are used as-is.
    """
    if len(frames) != geom.temporal_patch:
        raise InputShapeError(
            f"expected {geom.temporal_patch} frames per step, got {len(frames)}"
        )
    gh, gw, p, c = (
        geom.patch_grid_height,
        geom.patch_grid_width,
        geom.patch_size,
        geom.channels,
    )
    out = np.empty((geom.temporal_patch, gh, gw, p, p, c), dtype=np.float32)
    for f, frame in enumerate(frames):
        norm = _normalize_frame(frame, geom)
        # (gh, p, gw, p, c) -> (gh, gw, p, p, c)
        out[f] = norm.reshape(gh, p, gw, p, c).transpose(0, 2, 1, 3, 4)
    return PatchGrid(step=step, geom=geom, patches=out)


def unpatchify(grid: PatchGrid) -> list[np.ndarray]:
    """Inverse of patchify: reassemble the normalized frames (lossless tiling)."""
    geom = grid.geom
    gh, gw, p, c = (
        geom.patch_grid_height,
        geom.patch_grid_width,
        geom.patch_size,
        geom.channels,
    )
    frames = []
    for f in range(geom.temporal_patch):
        frame = grid.patches[f].transpose(0, 2, 1, 3, 4).reshape(gh * p, gw * p, c)
        frames.append(frame)
    return frames


def token_coords(geom: GridGeometry, step: int = 0) -> list[Position3D]:
    """Row-major (h, w) enumeration of token cells for one temporal step."""
    return [
        Position3D(step, h, w)
        for h in range(geom.token_height)
        for w in range(geom.token_width)
    ]


def patch_to_token_map(geom: GridGeometry) -> np.ndarray:
    """Flat patch index -> flat token index.

    Patch indices run row-major (frame, h, w) over the pre-merge grid;
    token indices run row-major (h, w) over the merged lattice. Each token
    cell owns spatial_merge**2 * temporal_patch patches.
    """
    m = geom.spatial_merge
    ph = np.arange(geom.patch_grid_height) // m
    pw = np.arange(geom.patch_grid_width) // m
    per_frame = ph[:, None] * geom.token_width + pw[None, :]
    return np.tile(per_frame.ravel(), geom.temporal_patch).astype(np.int64)
