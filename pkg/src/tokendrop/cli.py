"""Command-line surface: drop, analyze, triggers, stream, bench.

All data outputs are byte-deterministic for identical inputs and flags;
wall-clock timings appear only in bench reports. The environment variable
DTD_THREADS bounds internal parallelism (default: machine parallelism).
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, engine as engine_mod, formats, geometry
from .engine import (
    MODE_FEATURE_THRESHOLD,
    MODE_PIXEL_THRESHOLD,
    MODE_VIDEO_AWARE,
    MODES,
    EngineConfig,
    StreamEngine,
    run_batch,
)
from .errors import ConfigError, FormatError, TokenDropError
from .geometry import GridGeometry, patchify
from .redundancy import SlimTokenStream


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    eng = p.add_argument_group("engine")
    eng.add_argument("--mode", choices=MODES, default=MODE_FEATURE_THRESHOLD)
    eng.add_argument("--tau-feat", type=float, default=0.25)
    eng.add_argument("--tau-pixel", type=float, default=0.05)
    eng.add_argument("--ratio", type=float, default=None,
                     help="target drop ratio for frame-aware/video-aware modes")
    eng.add_argument("--trigger-threshold", type=float, default=0.60)
    eng.add_argument("--trigger-min-gap", type=int, default=2)
    eng.add_argument("--memory-budget", type=int, default=6144)
    eng.add_argument("--min-keep", type=int, default=0)
    geo = p.add_argument_group("geometry")
    geo.add_argument("--patch-size", type=int, default=14)
    geo.add_argument("--spatial-merge", type=int, default=2)
    geo.add_argument("--temporal-patch", type=int, default=2)
    geo.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--report", choices=("text", "machine"), default="text")


def _engine_config(args) -> EngineConfig:
    return EngineConfig(
        mode=args.mode,
        tau_pixel=args.tau_pixel,
        tau_feat=args.tau_feat,
        target_ratio=args.ratio,
        trigger_threshold=args.trigger_threshold,
        trigger_min_gap=args.trigger_min_gap,
        memory_budget=args.memory_budget,
        min_keep_per_step=args.min_keep,
    )


def _sniff_input(path: Path) -> str:
    """Classify an input path as 'frames' (RVF1/image dir) or 'tokens' (TKE1)."""
    if path.is_dir():
        return "frames"
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
    except OSError as exc:
        raise FormatError(f"cannot read input {path}: {exc}") from exc
    if magic == formats.RVF1_MAGIC:
        return "frames"
    if magic == formats.TKE1_MAGIC:
        return "tokens"
    raise FormatError(f"input {path}: unrecognized magic {magic!r}")


def _load_steps(args):
    """Read the input into (geom, patch_steps, token_steps)."""
    path = Path(args.input)
    kind = _sniff_input(path)
    if kind == "tokens":
        if args.mode == MODE_PIXEL_THRESHOLD:
            raise ConfigError(
                f"--mode {args.mode} needs pixel frames, but {path} is a TKE1 file"
            )
        grids = formats.read_embeddings(path)
        h, w = grids[0].height, grids[0].width
        geom = GridGeometry(
            input_width=w * args.patch_size * args.spatial_merge,
            input_height=h * args.patch_size * args.spatial_merge,
            channels=3,
            patch_size=args.patch_size,
            spatial_merge=args.spatial_merge,
            temporal_patch=args.temporal_patch,
            fps=args.fps,
        )
        return geom, None, grids
    if args.mode == MODE_FEATURE_THRESHOLD:
        raise ConfigError(
            f"--mode {args.mode} needs TKE1 embeddings, but {path} holds raw frames"
        )
    first = None
    if path.is_dir():
        probe = next(formats._iter_image_dir(path))
        h, w, c = probe.shape
        fps = args.fps
    else:
        with open(path, "rb") as fh:
            w, h, c, fps, _n = formats.read_rvf1_header(fh)
    geom = GridGeometry(
        input_width=w,
        input_height=h,
        channels=c,
        patch_size=args.patch_size,
        spatial_merge=args.spatial_merge,
        temporal_patch=args.temporal_patch,
        fps=fps,
    )
    patch_steps = [
        patchify(frames, geom, step=i)
        for i, frames in enumerate(formats.read_frames(path, geom))
    ]
    return geom, patch_steps, None


def _run(args):
    geom, patch_steps, token_steps = _load_steps(args)
    cfg = _engine_config(args)
    n = len(token_steps) if token_steps is not None else len(patch_steps)
    if n == 0:
        raise FormatError(f"input {args.input} holds no temporal steps")
    outputs = run_batch(cfg, geom, patch_steps=patch_steps, token_steps=token_steps)
    return geom, cfg, outputs


def _emit(line: str) -> None:
    sys.stdout.write(line + "\n")


def cmd_drop(args) -> int:
    geom, cfg, outputs = _run(args)
    dim = outputs[0].fragment.dim
    slim = SlimTokenStream.concat([o.fragment for o in outputs], dim=dim)
    formats.write_slim(args.slim_out, slim)
    formats.write_masks(args.mask_out, [o.mask for o in outputs])
    ratios = [o.entry.drop_ratio for o in outputs]
    total = sum(o.entry.total for o in outputs)
    retained = sum(o.entry.retained for o in outputs)
    summary = {
        "steps": len(outputs),
        "total_tokens": total,
        "retained_tokens": retained,
        "overall_drop_ratio": (total - retained) / total,
        "step_ratio_min": min(ratios),
        "step_ratio_mean": sum(ratios) / len(ratios),
        "step_ratio_max": max(ratios),
        "slim_out": str(args.slim_out),
        "mask_out": str(args.mask_out),
    }
    if args.report == "machine":
        _emit(json.dumps(summary))
    else:
        _emit(f"steps: {summary['steps']}")
        _emit(f"tokens: {retained} retained of {total} "
              f"(overall drop ratio {summary['overall_drop_ratio']:.4f})")
        _emit(f"per-step drop ratio: min {summary['step_ratio_min']:.4f} "
              f"mean {summary['step_ratio_mean']:.4f} "
              f"max {summary['step_ratio_max']:.4f}")
        _emit(f"wrote {args.slim_out} and {args.mask_out}")
    return 0


def cmd_analyze(args) -> int:
    geom, cfg, outputs = _run(args)
    entries = [o.entry for o in outputs]
    formats.write_timeline(args.timeline_out, entries)
    if args.plot:
        from .report import render_timeline

        render_timeline(entries, args.plot, trigger_threshold=cfg.trigger_threshold)
    # plot-ready two-column curve data
    for e in entries:
        _emit(f"{e.step}\t{e.drop_ratio!r}")
    return 0


def cmd_triggers(args) -> int:
    geom, cfg, outputs = _run(args)
    events = [o.trigger for o in outputs if o.trigger is not None]
    for ev in events:
        if args.report == "machine":
            _emit(json.dumps(
                {"step": ev.step, "wall_time": ev.wall_time, "drop_ratio": ev.drop_ratio}
            ))
        else:
            _emit(f"trigger step={ev.step} wall_time={ev.wall_time:.3f}s "
                  f"drop_ratio={ev.drop_ratio:.4f}")
    if args.report == "text" and not events:
        _emit("no triggers")
    return 0


def cmd_stream(args) -> int:
    stdin = sys.stdin.buffer
    w, h, c, fps, _n = formats.read_rvf1_header(stdin)
    geom = GridGeometry(
        input_width=w,
        input_height=h,
        channels=c,
        patch_size=args.patch_size,
        spatial_merge=args.spatial_merge,
        temporal_patch=args.temporal_patch,
        fps=fps,
    )
    if args.mode == MODE_FEATURE_THRESHOLD:
        raise ConfigError("--mode feature-threshold cannot consume raw frames on stdin")
    cfg = _engine_config(args)
    eng = StreamEngine(cfg, geom)
    frame_bytes = w * h * c
    step = 0
    group = []
    while True:
        raw = stdin.read(frame_bytes)
        if not raw:
            break
        if len(raw) != frame_bytes:
            raise FormatError(
                f"truncated frame on stdin: expected {frame_bytes} bytes, got {len(raw)}"
            )
        group.append(np.frombuffer(raw, dtype=np.uint8).reshape(h, w, c))
        if len(group) < geom.temporal_patch:
            continue
        out = eng.push(patches=patchify(group, geom, step=step))
        record = {
            "step": out.step,
            "wall_time": out.entry.wall_time,
            "drop_ratio": out.entry.drop_ratio,
            "retained": out.entry.retained,
            "total": out.entry.total,
            "trigger": out.entry.is_trigger,
            "memory_occupancy": eng.memory_occupancy,
        }
        sys.stdout.write(json.dumps(record) + "\n")
        sys.stdout.flush()
        group = []
        step += 1
    if group:
        while len(group) < geom.temporal_patch:
            group.append(group[-1])
        out = eng.push(patches=patchify(group, geom, step=step))
        record = {
            "step": out.step,
            "wall_time": out.entry.wall_time,
            "drop_ratio": out.entry.drop_ratio,
            "retained": out.entry.retained,
            "total": out.entry.total,
            "trigger": out.entry.is_trigger,
            "memory_occupancy": eng.memory_occupancy,
        }
        sys.stdout.write(json.dumps(record) + "\n")
        sys.stdout.flush()
    return 0


def cmd_bench(args) -> int:
    geom, patch_steps, token_steps = _load_steps(args)
    cfg = _engine_config(args)
    rows = []
    for rep in range(args.repeat):
        t0 = time.perf_counter()
        outputs = run_batch(cfg, geom, patch_steps=patch_steps, token_steps=token_steps)
        elapsed = time.perf_counter() - t0
        steps = len(outputs)
        total_tokens = sum(o.entry.total for o in outputs)
        retained = sum(o.entry.retained for o in outputs)
        rows.append({
            "repeat": rep,
            "seconds": elapsed,
            "steps_per_second": steps / elapsed,
            "tokens_per_second": total_tokens / elapsed,
            "retained_tokens": retained,
        })
    med = statistics.median(r["steps_per_second"] for r in rows)
    if args.report == "machine":
        for r in rows:
            _emit(json.dumps(r))
        _emit(json.dumps({"median_steps_per_second": med}))
    else:
        for r in rows:
            _emit(f"run {r['repeat']}: {r['seconds']:.3f}s "
                  f"({r['steps_per_second']:.1f} steps/s, "
                  f"{r['tokens_per_second']:.0f} tokens/s, "
                  f"{r['retained_tokens']} retained)")
        _emit(f"median: {med:.1f} steps/s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokendrop",
        description="Streaming video token reduction via temporal redundancy",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("drop", help="write slim token stream + masks + summary")
    p.add_argument("input")
    p.add_argument("--slim-out", required=True)
    p.add_argument("--mask-out", required=True)
    _add_common_flags(p)
    p.set_defaults(func=cmd_drop)

    p = sub.add_parser("analyze", help="write drop-ratio timeline and curve data")
    p.add_argument("input")
    p.add_argument("--timeline-out", required=True)
    p.add_argument("--plot", default=None, help="also render the curve to this image file")
    _add_common_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("triggers", help="list scene-transition trigger events")
    p.add_argument("input")
    _add_common_flags(p)
    p.set_defaults(func=cmd_triggers)

    p = sub.add_parser("stream", help="consume RVF1 on stdin, emit per-step records")
    _add_common_flags(p)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("bench", help="throughput report")
    p.add_argument("input")
    p.add_argument("--repeat", type=int, default=3)
    _add_common_flags(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TokenDropError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
