"""Bit-exact little-endian file formats.

Four formats:

* RVF1 — raw video: header (magic, width, height, channels, fps_milli,
  frame_count, header_crc32), then row-major 8-bit frames in time order.
* TKE1 — token embeddings: header (magic, T, H, W, D, header_crc32), then
  T*H*W*D little-endian float32, row-major (t, h, w, d).
* STK1 — slim token stream: header (magic, record_count, D, header_crc32),
  then records of (t, h, w) uint32 + D float32, sorted by (t, h, w).
* MSK1 — drop masks: header (magic, T, H, W, header_crc32), then T*H*W
  bytes, 1 = DROP.

Every binary header ends with a CRC32 of the preceding header bytes so any
single-byte header corruption is rejected, including fields (such as
fps_milli) that no payload-length check could catch.

The timeline format is UTF-8 JSON lines, one flat object per step with
keys step, wall_time, drop_ratio, retained, total, trigger.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

from .engine import TimelineEntry
from .errors import DataError, FormatError, InputShapeError, IoError
from .geometry import GridGeometry
from .redundancy import DropMask, SlimTokenStream, TokenGrid

RVF1_MAGIC = b"RVF1"
TKE1_MAGIC = b"TKE1"
STK1_MAGIC = b"STK1"
MSK1_MAGIC = b"MSK1"

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")


def _pack_header(magic: bytes, *fields: int) -> bytes:
    body = magic + struct.pack("<%dI" % len(fields), *fields)
    return body + struct.pack("<I", zlib.crc32(body))


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what}: expected {n} bytes, got {len(data)}")
    return data


def _read_header(fh: BinaryIO, magic: bytes, nfields: int, name: str) -> tuple[int, ...]:
    raw = _read_exact(fh, 4 + 4 * nfields + 4, f"{name} header")
    if raw[:4] != magic:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {magic!r}")
    (crc,) = struct.unpack("<I", raw[-4:])
    if crc != zlib.crc32(raw[:-4]):
        raise FormatError(f"{name} header checksum mismatch")
    return struct.unpack("<%dI" % nfields, raw[4:-4])


def _open_out(path) -> BinaryIO:
    try:
        return open(path, "wb")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# RVF1 raw video


def write_rvf1(path, frames: np.ndarray, fps: float) -> None:
    """frames: uint8 array of shape (n, height, width, channels)."""
    frames = np.asarray(frames)
    if frames.dtype != np.uint8 or frames.ndim != 4:
        raise InputShapeError("RVF1 frames must be uint8 (n, h, w, c)")
    n, h, w, c = frames.shape
    if c not in (1, 3):
        raise InputShapeError(f"channels must be 1 or 3, got {c}")
    with _open_out(path) as fh:
        fh.write(_pack_header(RVF1_MAGIC, w, h, c, int(round(fps * 1000)), n))
        fh.write(np.ascontiguousarray(frames).tobytes())


def read_rvf1_header(fh: BinaryIO) -> tuple[int, int, int, float, int]:
    w, h, c, fps_milli, n = _read_header(fh, RVF1_MAGIC, 5, "RVF1")
    if c not in (1, 3):
        raise FormatError(f"RVF1 channels must be 1 or 3, got {c}")
    if fps_milli == 0:
        raise FormatError("RVF1 fps must be positive")
    return w, h, c, fps_milli / 1000.0, n


def iter_rvf1_frames(fh: BinaryIO) -> Iterator[np.ndarray]:
    """Yield uint8 (h, w, c) frames from an open RVF1 stream."""
    w, h, c, _fps, n = read_rvf1_header(fh)
    frame_bytes = w * h * c
    for i in range(n):
        raw = _read_exact(fh, frame_bytes, f"RVF1 frame {i}")
        yield np.frombuffer(raw, dtype=np.uint8).reshape(h, w, c)


def read_rvf1(path) -> tuple[np.ndarray, float]:
    with open(path, "rb") as fh:
        w, h, c, fps, n = read_rvf1_header(fh)
        payload = fh.read()
        expected = n * h * w * c
        if len(payload) != expected:
            raise FormatError(
                f"RVF1 payload length mismatch: expected {expected} bytes, "
                f"got {len(payload)}"
            )
        frames = np.frombuffer(payload, dtype=np.uint8).reshape(n, h, w, c)
    return frames, fps


def _iter_image_dir(path: Path) -> Iterator[np.ndarray]:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise IoError("Pillow is required to read image directories") from exc
    names = sorted(p.name for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not names:
        raise FormatError(f"no PNG/PPM images found in {path}")
    shape = None
    for name in names:
        arr = np.asarray(Image.open(path / name), dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise InputShapeError(
                f"image {name} has shape {arr.shape}, expected {shape}"
            )
        yield arr


def read_frames(source, geom: GridGeometry) -> Iterator[list[np.ndarray]]:
    """Yield lists of ``temporal_patch`` frames per step.

    ``source`` is an RVF1 path, an open binary stream, or a directory of
    equally-sized PNG/PPM images consumed in lexicographic filename order.
    A trailing partial step is padded by repeating its last frame and a
    warning is emitted.
    """
    import warnings as _warnings

    if hasattr(source, "read"):
        frames: Iterable[np.ndarray] = iter_rvf1_frames(source)
    else:
        p = Path(source)
        if p.is_dir():
            frames = _iter_image_dir(p)
        else:
            frames_arr, _fps = read_rvf1(p)
            frames = iter(frames_arr)

    group: list[np.ndarray] = []
    for frame in frames:
        group.append(frame)
        if len(group) == geom.temporal_patch:
            yield group
            group = []
    if group:
        _warnings.warn(
            f"trailing partial step of {len(group)} frames padded by "
            f"repeating the last frame",
            stacklevel=2,
        )
        while len(group) < geom.temporal_patch:
            group.append(group[-1])
        yield group


# ---------------------------------------------------------------------------
# TKE1 token embeddings


def write_embeddings(path, grids: Sequence[TokenGrid]) -> None:
    if not grids:
        raise InputShapeError("cannot write an empty TKE1 file")
    h, w, d = grids[0].height, grids[0].width, grids[0].dim
    with _open_out(path) as fh:
        fh.write(_pack_header(TKE1_MAGIC, len(grids), h, w, d))
        for g in grids:
            if (g.height, g.width, g.dim) != (h, w, d):
                raise InputShapeError("token grids have mismatched shapes")
            fh.write(g.values.astype("<f4").tobytes())


def read_embeddings(path) -> list[TokenGrid]:
    with open(path, "rb") as fh:
        t, h, w, d = _read_header(fh, TKE1_MAGIC, 4, "TKE1")
        expected = 4 * t * h * w * d
        payload = fh.read()
        if len(payload) != expected:
            raise FormatError(
                f"TKE1 payload length mismatch: expected {expected} bytes, "
                f"got {len(payload)}"
            )
    values = np.frombuffer(payload, dtype="<f4").reshape(t, h, w, d)
    bad = np.argwhere(~np.isfinite(values))
    if len(bad):
        loc = tuple(int(x) for x in bad[0])
        raise DataError(f"non-finite embedding value at (t, h, w, d) = {loc}")
    return [TokenGrid.from_array(i, values[i]) for i in range(t)]


# ---------------------------------------------------------------------------
# STK1 slim token stream


def _slim_record_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [("t", "<u4"), ("h", "<u4"), ("w", "<u4"), ("e", "<f4", (dim,))]
    )


def _check_slim_sorted(positions: np.ndarray, err_cls) -> None:
    if len(positions) > 1:
        order = np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0]))
        if not np.array_equal(order, np.arange(len(positions))):
            raise err_cls("slim stream records are not sorted by (t, h, w)")


def write_slim(path, stream: SlimTokenStream) -> None:
    pos = stream.positions
    _check_slim_sorted(pos, InputShapeError)
    with _open_out(path) as fh:
        fh.write(_pack_header(STK1_MAGIC, len(pos), stream.dim))
        if len(pos):
            body = np.empty(len(pos), dtype=_slim_record_dtype(stream.dim))
            body["t"], body["h"], body["w"] = pos[:, 0], pos[:, 1], pos[:, 2]
            body["e"] = stream.embeddings
            fh.write(body.tobytes())


def read_slim(path) -> SlimTokenStream:
    with open(path, "rb") as fh:
        count, dim = _read_header(fh, STK1_MAGIC, 2, "STK1")
        record_bytes = 12 + 4 * dim
        payload = fh.read()
        if len(payload) != count * record_bytes:
            raise FormatError(
                f"STK1 payload length mismatch: expected {count * record_bytes} "
                f"bytes, got {len(payload)}"
            )
    if count == 0:
        return SlimTokenStream(dim=dim)
    rows = np.frombuffer(payload, dtype=_slim_record_dtype(dim))
    positions = np.stack(
        [rows["t"], rows["h"], rows["w"]], axis=1
    ).astype(np.int64)
    embeddings = rows["e"].astype(np.float32).reshape(count, dim)
    _check_slim_sorted(positions, FormatError)
    return SlimTokenStream(dim=dim, positions=positions, embeddings=embeddings)


# ---------------------------------------------------------------------------
# MSK1 drop masks


def write_masks(path, masks: Sequence[DropMask]) -> None:
    if not masks:
        raise InputShapeError("cannot write an empty MSK1 file")
    h, w = masks[0].bits.shape
    with _open_out(path) as fh:
        fh.write(_pack_header(MSK1_MAGIC, len(masks), h, w))
        for m in masks:
            if m.bits.shape != (h, w):
                raise InputShapeError("masks have mismatched lattice shapes")
            fh.write(m.bits.astype(np.uint8).tobytes())


def read_masks(path) -> list[DropMask]:
    with open(path, "rb") as fh:
        t, h, w = _read_header(fh, MSK1_MAGIC, 3, "MSK1")
        expected = t * h * w
        payload = fh.read()
        if len(payload) != expected:
            raise FormatError(
                f"MSK1 payload length mismatch: expected {expected} bytes, "
                f"got {len(payload)}"
            )
    if max(payload, default=0) > 1:
        raise FormatError("MSK1 payload contains bytes other than 0/1")
    bits = np.frombuffer(payload, dtype=np.uint8).reshape(t, h, w).astype(bool)
    return [DropMask(step=i, bits=bits[i]) for i in range(t)]


# ---------------------------------------------------------------------------
# Timeline (JSON lines)


def timeline_record(entry: TimelineEntry) -> str:
    return json.dumps(
        {
            "step": entry.step,
            "wall_time": entry.wall_time,
            "drop_ratio": entry.drop_ratio,
            "retained": entry.retained,
            "total": entry.total,
            "trigger": entry.is_trigger,
        }
    )


def write_timeline(path, entries: Sequence[TimelineEntry]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for e in entries:
                fh.write(timeline_record(e) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_timeline(path) -> list[TimelineEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entry = TimelineEntry(
                    step=int(obj["step"]),
                    wall_time=float(obj["wall_time"]),
                    drop_ratio=float(obj["drop_ratio"]),
                    retained=int(obj["retained"]),
                    total=int(obj["total"]),
                    is_trigger=bool(obj["trigger"]),
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"bad timeline record at line {lineno + 1}: {exc}")
            if entries and entry.step <= entries[-1].step:
                raise FormatError("timeline steps are not strictly increasing")
            entries.append(entry)
    return entries
