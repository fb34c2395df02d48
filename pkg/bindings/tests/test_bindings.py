import numpy as np
import pytest

import tokendrop
from tokendrop import ConfigError, InputShapeError, SequenceError
from tokendrop_bindings import (
    __version__,
    bind_create,
    bind_push,
    bind_snapshot,
    bind_timeline,
    bind_triggers,
)


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)


def feature_handle(**overrides):
    cfg = {"mode": "feature-threshold", "input_width": 56, "input_height": 56}
    cfg.update(overrides)
    return bind_create(cfg)


def random_grid(rng, h=2, w=2, d=4):
    return rng.standard_normal((h, w, d)).astype(np.float32)


class TestCreate:
    def test_empty_mapping_uses_defaults(self):
        handle = bind_create({})
        assert handle.config.mode == "feature-threshold"
        assert handle.config.tau_feat == 0.25
        assert handle.config.memory_budget == 6144
        assert handle.geometry.input_width == 448
        assert handle.geometry.token_width == 16

    def test_omitted_mapping_equals_empty(self):
        assert bind_create().config == bind_create({}).config

    def test_feature_threshold_with_tau(self):
        handle = bind_create({"mode": "feature-threshold", "tau_feat": 0.25})
        assert handle.config.tau_feat == 0.25
        assert (handle.geometry.token_height, handle.geometry.token_width) == (16, 16)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys: taufeat"):
            bind_create({"taufeat": 0.25})

    def test_out_of_range_tau_rejected(self):
        with pytest.raises(ConfigError, match=r"tau_feat must be within \[-1, 1\]"):
            bind_create({"tau_feat": 2.0})

    def test_version_matches_core(self):
        assert __version__ == tokendrop.__version__


class TestPush:
    def test_identical_grids_second_ratio_one(self, rng):
        handle = feature_handle()
        grid = random_grid(rng)
        first = bind_push(handle, grid)
        second = bind_push(handle, grid)
        assert first.ratio == 0.0
        assert second.ratio == 1.0
        assert second.positions.shape == (0, 3)
        assert second.embeddings.shape == (0, 4)

    def test_wrong_dtype_rejected(self, rng):
        handle = feature_handle()
        with pytest.raises(InputShapeError, match="float32"):
            bind_push(handle, rng.standard_normal((2, 2, 4)))  # float64

    def test_wrong_rank_rejected(self, rng):
        handle = feature_handle()
        with pytest.raises(InputShapeError, match="shape"):
            bind_push(handle, rng.standard_normal((2, 2)).astype(np.float32))

    def test_pixel_mode_accepts_uint8_frames(self, rng):
        handle = bind_create({
            "mode": "pixel-threshold", "input_width": 4, "input_height": 4,
            "channels": 1, "patch_size": 2, "spatial_merge": 1, "temporal_patch": 2,
        })
        frames = rng.integers(0, 256, (2, 4, 4, 1), dtype=np.uint8)
        out = bind_push(handle, frames)
        assert out.mask.shape == (2, 2)
        assert out.ratio == 0.0

    def test_results_are_copies(self, rng):
        handle = feature_handle()
        grid = random_grid(rng)
        bind_push(handle, grid)
        out = bind_push(handle, random_grid(rng))
        out.mask[:] = True
        out.positions[:] = -1
        out.embeddings[:] = np.nan
        # engine state must be untouched by the mutations above
        pos, emb = bind_snapshot(handle)
        assert (pos >= 0).all()
        assert np.isfinite(emb).all()

    def test_concurrent_push_raises(self, rng):
        handle = feature_handle()
        with handle._push_lock:
            with pytest.raises(SequenceError, match="single-writer"):
                bind_push(handle, random_grid(rng))
        # the handle stays usable afterwards
        assert bind_push(handle, random_grid(rng)).step == 0

    def test_no_state_leakage_between_handles(self, rng):
        grids_a = [random_grid(rng) for _ in range(4)]
        grids_b = [random_grid(rng) for _ in range(4)]

        solo_a = feature_handle()
        solo_b = feature_handle()
        expect_a = [bind_push(solo_a, g) for g in grids_a]
        expect_b = [bind_push(solo_b, g) for g in grids_b]

        inter_a = feature_handle()
        inter_b = feature_handle()
        got_a, got_b = [], []
        for ga, gb in zip(grids_a, grids_b):
            got_a.append(bind_push(inter_a, ga))
            got_b.append(bind_push(inter_b, gb))

        for expect, got in ((expect_a, got_a), (expect_b, got_b)):
            for e, g in zip(expect, got):
                assert np.array_equal(e.mask, g.mask)
                assert e.embeddings.tobytes() == g.embeddings.tobytes()
                assert e.ratio == g.ratio


class TestSnapshot:
    def test_empty_engine_zero_rows(self):
        pos, emb = bind_snapshot(feature_handle())
        assert pos.shape == (0, 3)
        assert len(emb) == 0

    def test_under_budget_counts_all_retained(self, rng):
        handle = feature_handle()
        retained = sum(len(bind_push(handle, random_grid(rng)).positions)
                       for _ in range(5))
        pos, emb = bind_snapshot(handle)
        assert len(pos) == len(emb) == retained

    def test_over_budget_bounded(self, rng):
        handle = feature_handle(memory_budget=5)
        for _ in range(6):
            bind_push(handle, random_grid(rng))
        pos, _ = bind_snapshot(handle)
        assert len(pos) <= 5


class TestTimeline:
    def test_entries_and_trigger_events(self, rng):
        handle = bind_create({
            "mode": "pixel-threshold", "input_width": 4, "input_height": 4,
            "channels": 1, "patch_size": 2, "spatial_merge": 1, "temporal_patch": 2,
        })
        # static scene, then a cut at step 2
        scene_a = np.full((2, 4, 4, 1), 30, np.uint8)
        scene_b = np.full((2, 4, 4, 1), 220, np.uint8)
        results = [bind_push(handle, f) for f in (scene_a, scene_a, scene_b, scene_b)]
        entries = bind_timeline(handle)
        assert [e.step for e in entries] == [0, 1, 2, 3]
        assert [e.drop_ratio for e in entries] == [r.ratio for r in results]
        assert [t.step for t in bind_triggers(handle)] == [2]
        assert [r.trigger for r in results] == [False, False, True, False]
