import numpy as np
import pytest

from tokendrop import GridGeometry, TokenGrid, patchify


def tiny_geom(**overrides) -> GridGeometry:
    """Small lattice used throughout the tests: 2x2 patches of 2px, merge 1."""
    params = dict(
        input_width=4,
        input_height=4,
        channels=1,
        patch_size=2,
        spatial_merge=1,
        temporal_patch=1,
        fps=1.0,
    )
    params.update(overrides)
    return GridGeometry(**params)


def random_token_clip(rng, steps, height, width, dim):
    return [
        TokenGrid.from_array(
            t, rng.standard_normal((height, width, dim)).astype(np.float32)
        )
        for t in range(steps)
    ]


def random_frames(rng, geom, count):
    return rng.integers(
        0, 256,
        size=(count, geom.input_height, geom.input_width, geom.channels),
        dtype=np.uint8,
    )


def random_patch_clip(rng, geom, steps):
    frames = random_frames(rng, geom, steps * geom.temporal_patch)
    return [
        patchify(frames[t * geom.temporal_patch : (t + 1) * geom.temporal_patch], geom, step=t)
        for t in range(steps)
    ]


def uniform_frame(geom, value):
    return np.full(
        (geom.input_height, geom.input_width, geom.channels), value, dtype=np.uint8
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
