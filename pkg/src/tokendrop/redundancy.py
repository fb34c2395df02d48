"""Temporal redundancy scoring and position-preserving token dropping.

Similarity is always measured between temporally consecutive, spatially
identical cells. Pixel scores are per-sample mean absolute differences
(smaller = more similar); feature scores are cosine similarities
(larger = more similar).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import floor
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError, InputShapeError
from .geometry import PatchGrid, Position3D

PIXEL = "pixel"
FEATURE = "feature"


@dataclass
class TokenGrid:
    """Per-step token embeddings, row-major (h, w, d) float32."""

    step: int
    height: int
    width: int
    dim: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        expected = (self.height, self.width, self.dim)
        if self.values.shape != expected:
            raise InputShapeError(
                f"token values shape {self.values.shape} != {expected}"
            )

    @classmethod
    def from_array(cls, step: int, values: np.ndarray) -> "TokenGrid":
        values = np.asarray(values)
        if values.ndim != 3:
            raise InputShapeError(f"expected (h, w, d) array, got shape {values.shape}")
        h, w, d = values.shape
        return cls(step=step, height=h, width=w, dim=d, values=values)


@dataclass
class DropMask:
    """Boolean keep/drop decision per (h, w) cell; True means DROP."""

    step: int
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise InputShapeError(f"mask must be 2D, got shape {self.bits.shape}")

    @property
    def dropped(self) -> int:
        return int(self.bits.sum())

    @property
    def total(self) -> int:
        return int(self.bits.size)


@dataclass
class SimilarityField:
    """Per-cell similarity score for one step versus its predecessor."""

    step: int
    scores: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in (PIXEL, FEATURE):
            raise ConfigError(f"unknown similarity kind {self.kind!r}")
        self.scores = np.ascontiguousarray(self.scores, dtype=np.float32)


@dataclass
class SlimTokenStream:
    """Retained tokens with their original pre-drop 3D positions.

    positions is (N, 3) int64 rows of (t, h, w), sorted ascending;
    embeddings is (N, dim) float32, row-aligned with positions.
    """

    dim: int
    positions: np.ndarray = field(default=None)
    embeddings: np.ndarray = field(default=None)
    source_steps: int = 0

    def __post_init__(self):
        if self.positions is None:
            self.positions = np.empty((0, 3), dtype=np.int64)
        if self.embeddings is None:
            self.embeddings = np.empty((0, self.dim), dtype=np.float32)
        self.positions = np.ascontiguousarray(self.positions, dtype=np.int64)
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        if len(self.positions) != len(self.embeddings):
            raise InputShapeError("positions/embeddings row counts differ")

    def __len__(self) -> int:
        return len(self.positions)

    def records(self) -> Iterator[tuple[Position3D, np.ndarray]]:
        for (t, h, w), vec in zip(self.positions, self.embeddings):
            yield Position3D(int(t), int(h), int(w)), vec

    @classmethod
    def concat(cls, fragments: Sequence["SlimTokenStream"], dim: int) -> "SlimTokenStream":
        if not fragments:
            return cls(dim=dim)
        return cls(
            dim=dim,
            positions=np.concatenate([f.positions for f in fragments]),
            embeddings=np.concatenate([f.embeddings for f in fragments]),
            source_steps=sum(f.source_steps for f in fragments),
        )


def pixel_similarity(prev: PatchGrid, cur: PatchGrid) -> SimilarityField:
    """Mean-absolute pixel difference per token cell, lifted from patches.

    Each patch yields a per-sample mean absolute difference; a token cell
    takes the MAXIMUM over the patches it owns, so a cell is only as
    redundant as its least-redundant patch.
    """
    if prev.patches.shape != cur.patches.shape or prev.geom != cur.geom:
        raise InputShapeError("patch grids have mismatched geometry")
    if prev.step + 1 != cur.step:
        raise InputShapeError(
            f"grids are not consecutive steps ({prev.step} -> {cur.step})"
        )
    geom = cur.geom
    diff = np.subtract(cur.patches, prev.patches, dtype=np.float64)
    np.abs(diff, out=diff)
    # per-patch mean over (patch, patch, channels), accumulated in f64 so the
    # f32 scores are independent of summation order
    per_patch = diff.reshape(diff.shape[0], diff.shape[1], diff.shape[2], -1).mean(axis=3)
    m = geom.spatial_merge
    th, tw = geom.token_height, geom.token_width
    per_cell = per_patch.reshape(-1, th, m, tw, m).max(axis=(0, 2, 4))
    return SimilarityField(step=cur.step, scores=per_cell, kind=PIXEL)


def feature_similarity(prev: TokenGrid, cur: TokenGrid) -> SimilarityField:
    """Cosine similarity per spatially-aligned token cell.

    Zero vector vs zero vector is defined as 1.0; zero vs nonzero as 0.0.
    """
    if (prev.height, prev.width, prev.dim) != (cur.height, cur.width, cur.dim):
        raise InputShapeError("token grids have mismatched lattice or width")
    if prev.step + 1 != cur.step:
        raise InputShapeError(
            f"grids are not consecutive steps ({prev.step} -> {cur.step})"
        )
    a = prev.values.astype(np.float64)
    b = cur.values.astype(np.float64)
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise DataError("token grid contains NaN/inf")
    dot = np.einsum("hwd,hwd->hw", a, b)
    na = np.sqrt(np.einsum("hwd,hwd->hw", a, a))
    nb = np.sqrt(np.einsum("hwd,hwd->hw", b, b))
    denom = na * nb
    scores = np.empty_like(dot)
    nonzero = denom > 0.0
    scores[nonzero] = dot[nonzero] / denom[nonzero]
    both_zero = (na == 0.0) & (nb == 0.0)
    scores[~nonzero] = 0.0
    scores[both_zero] = 1.0
    return SimilarityField(step=cur.step, scores=scores, kind=FEATURE)


def threshold_mask(field: SimilarityField, tau: float) -> DropMask:
    """Drop redundant cells by strict threshold comparison.

    Pixel kind drops when score < tau; feature kind drops when score > tau.
    Equality keeps.
    """
    if not np.isfinite(tau):
        raise ConfigError("tau must be finite")
    if field.kind == PIXEL:
        if tau < 0:
            raise ConfigError("tau_pixel must be >= 0")
        bits = field.scores < tau
    else:
        if not (-1.0 <= tau <= 1.0):
            raise ConfigError("tau_feat must be within [-1, 1]")
        bits = field.scores > tau
    return DropMask(step=field.step, bits=bits)


def _redundancy_rank_keys(field: SimilarityField) -> np.ndarray:
    """Flat sort key, most-redundant-first with (h, w) tie-break."""
    flat = field.scores.ravel().astype(np.float64)
    if field.kind == FEATURE:
        flat = -flat
    # stable sort preserves row-major (h, w) order among ties
    return np.argsort(flat, kind="stable")


def frame_aware_mask(field: SimilarityField, ratio: float) -> DropMask:
    """Drop exactly floor(ratio * cells) most-similar cells of one step."""
    if not (0.0 <= ratio <= 1.0):
        raise ConfigError(f"drop ratio {ratio} outside [0, 1]")
    n = field.scores.size
    # exact budget: floor over the rational value of the given ratio,
    # independent of multiplication order
    k = floor(Fraction(ratio) * n)
    order = _redundancy_rank_keys(field)
    bits = np.zeros(n, dtype=bool)
    bits[order[:k]] = True
    return DropMask(step=field.step, bits=bits.reshape(field.scores.shape))


def video_aware_masks(fields: Sequence[SimilarityField], ratio: float) -> list[DropMask]:
    """Pool all steps and drop a single global budget of most-similar cells.

    Ties break by ascending (t, h, w). Step 0 is never in the pool; callers
    pass fields for steps 1..T-1 only.
    """
    if not (0.0 <= ratio <= 1.0):
        raise ConfigError(f"drop ratio {ratio} outside [0, 1]")
    if not fields:
        return []
    kind = fields[0].kind
    shape = fields[0].scores.shape
    for f in fields:
        if f.kind != kind or f.scores.shape != shape:
            raise InputShapeError("similarity fields are heterogeneous")
    for a, b in zip(fields, fields[1:]):
        if b.step != a.step + 1:
            raise InputShapeError("similarity fields are not contiguous steps")
    pooled = np.concatenate([f.scores.ravel() for f in fields]).astype(np.float64)
    if kind == FEATURE:
        pooled = -pooled
    total = pooled.size
    k = floor(Fraction(ratio) * total)
    order = np.argsort(pooled, kind="stable")
    bits = np.zeros(total, dtype=bool)
    bits[order[:k]] = True
    per_step = shape[0] * shape[1]
    return [
        DropMask(step=f.step, bits=bits[i * per_step : (i + 1) * per_step].reshape(shape))
        for i, f in enumerate(fields)
    ]


def apply_mask(
    tokens: TokenGrid, positions: Sequence[Position3D], mask: DropMask
) -> SlimTokenStream:
    """Filter a token grid to its KEEP cells, preserving original positions."""
    if mask.bits.shape != (tokens.height, tokens.width):
        raise InputShapeError(
            f"mask shape {mask.bits.shape} != lattice "
            f"({tokens.height}, {tokens.width})"
        )
    if len(positions) != tokens.height * tokens.width:
        raise InputShapeError("positions do not cover the full lattice")
    keep = ~mask.bits.ravel()
    pos = np.array([(p.t, p.h, p.w) for p in positions], dtype=np.int64)
    emb = tokens.values.reshape(-1, tokens.dim)
    return SlimTokenStream(
        dim=tokens.dim,
        positions=pos[keep],
        embeddings=emb[keep].copy(),
        source_steps=1,
    )


def drop_ratio(mask: DropMask) -> float:
    """Fraction of cells marked DROP."""
    return mask.dropped / mask.total
