"""Figure rendering for the analysis path.

Renders the per-step drop-ratio curve with trigger markers to an image
file next to the delimited timeline output. Matplotlib is imported lazily
so the core pipeline stays dependency-light.
"""

from __future__ import annotations

from typing import Sequence

from .engine import TimelineEntry
from .errors import IoError


def render_timeline(
    entries: Sequence[TimelineEntry],
    path,
    trigger_threshold: float | None = None,
    title: str = "Drop ratio per temporal step",
) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [e.step for e in entries]
    ratios = [e.drop_ratio for e in entries]

    fig, ax = plt.subplots(figsize=(8, 3.2))
    ax.plot(steps, ratios, color="#1f77b4", lw=1.5, marker="o", ms=3, label="drop ratio")
    trig = [(e.step, e.drop_ratio) for e in entries if e.is_trigger]
    if trig:
        tx, ty = zip(*trig)
        ax.scatter(tx, ty, color="#d62728", zorder=5, s=36, label="trigger")
    if trigger_threshold is not None:
        ax.axhline(trigger_threshold, color="gray", ls="--", lw=1, label="trigger threshold")
    ax.set_xlabel("temporal step")
    ax.set_ylabel("drop ratio")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    try:
        fig.savefig(path, dpi=120)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
