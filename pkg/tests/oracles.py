"""Naive reference implementations used only to check the library.

Everything here is deliberately written as explicit Python loops over
cells, independent of the numpy code paths under test.
"""

import math
from fractions import Fraction

import numpy as np


def naive_pixel_scores(prev_grid, cur_grid):
    """Per token cell: max over owned patches of per-sample mean abs diff."""
    geom = cur_grid.geom
    m = geom.spatial_merge
    scores = np.zeros((geom.token_height, geom.token_width))
    for th in range(geom.token_height):
        for tw in range(geom.token_width):
            worst = 0.0
            for f in range(geom.temporal_patch):
                for dh in range(m):
                    for dw in range(m):
                        a = prev_grid.patches[f, th * m + dh, tw * m + dw]
                        b = cur_grid.patches[f, th * m + dh, tw * m + dw]
                        total = 0.0
                        count = 0
                        for x in np.nditer(np.abs(a.astype(np.float64) - b.astype(np.float64))):
                            total += float(x)
                            count += 1
                        worst = max(worst, total / count)
            scores[th, tw] = worst
    return scores


def naive_feature_scores(prev_grid, cur_grid):
    scores = np.zeros((cur_grid.height, cur_grid.width))
    for h in range(cur_grid.height):
        for w in range(cur_grid.width):
            a = prev_grid.values[h, w].astype(np.float64)
            b = cur_grid.values[h, w].astype(np.float64)
            dot = sum(float(x) * float(y) for x, y in zip(a, b))
            na = math.sqrt(sum(float(x) ** 2 for x in a))
            nb = math.sqrt(sum(float(y) ** 2 for y in b))
            if na == 0.0 and nb == 0.0:
                scores[h, w] = 1.0
            elif na == 0.0 or nb == 0.0:
                scores[h, w] = 0.0
            else:
                scores[h, w] = dot / (na * nb)
    return scores


def naive_threshold_mask(scores, kind, tau):
    h, w = scores.shape
    bits = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            if kind == "pixel":
                bits[i, j] = scores[i, j] < tau
            else:
                bits[i, j] = scores[i, j] > tau
    return bits


def _ranked_cells(step_scores, kind):
    """[(sort_key, t, h, w)] most-redundant first, ties by (t, h, w)."""
    cells = []
    for t, scores in step_scores:
        for h in range(scores.shape[0]):
            for w in range(scores.shape[1]):
                s = float(np.float64(scores[h, w]))
                key = -s if kind == "feature" else s
                cells.append((key, t, h, w))
    cells.sort()
    return cells


def naive_frame_aware_mask(scores, kind, ratio):
    h, w = scores.shape
    k = math.floor(Fraction(ratio) * (h * w))
    bits = np.zeros((h, w), dtype=bool)
    for _, _, i, j in _ranked_cells([(0, scores)], kind)[:k]:
        bits[i, j] = True
    return bits


def naive_video_aware_masks(step_scores, kind, ratio):
    """step_scores: [(step, scores)] for steps 1..T-1."""
    total = sum(s.shape[0] * s.shape[1] for _, s in step_scores)
    k = math.floor(Fraction(ratio) * total)
    masks = {t: np.zeros(s.shape, dtype=bool) for t, s in step_scores}
    for _, t, i, j in _ranked_cells(step_scores, kind)[:k]:
        masks[t][i, j] = True
    return [masks[t] for t, _ in step_scores]
