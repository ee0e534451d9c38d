"""Layer averaging, segment statistics, and the feature file format."""

import numpy as np
import pytest

from blendfuse.core import ValidationError
from blendfuse.features import (
    AggregationConfig,
    FrameFeatureSequence,
    aggregate_sequence,
    aggregate_temporal,
    average_layers,
    load_feature_file,
    load_feature_manifest,
    save_feature_file,
    save_feature_manifest,
)


def seq(data, video_id="v"):
    return FrameFeatureSequence(video_id, np.asarray(data, dtype=float))


class TestAverageLayers:
    def test_identical_layers_unchanged(self):
        layer = np.arange(12.0).reshape(3, 4)
        s = seq(np.stack([layer, layer]))
        assert np.array_equal(average_layers(s, 0, 1), layer)

    def test_scalar_mean(self):
        s = seq([[[1.0]], [[3.0]]])
        assert average_layers(s, 0, 1) == np.array([[2.0]])

    def test_single_layer_identity(self):
        rng = np.random.default_rng(0)
        data = rng.normal(size=(4, 5, 3))
        s = seq(data)
        for k in range(4):
            assert np.array_equal(average_layers(s, k, k), data[k])

    def test_out_of_range_rejected(self):
        s = seq(np.zeros((2, 3, 4)))
        with pytest.raises(ValidationError):
            average_layers(s, 0, 2)
        with pytest.raises(ValidationError):
            average_layers(s, -1, 1)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValidationError):
            seq([[[np.inf]]])


class TestAggregateTemporal:
    def test_worked_example(self):
        frames = np.array([[0, 0], [2, 2], [4, 4], [6, 6], [8, 8], [10, 10]], dtype=float)
        cfg = AggregationConfig(layer_lo=0, layer_hi=0, segments=3)
        out = aggregate_temporal(frames, cfg)
        # segment means (1,1) (5,5) (9,9), population stds all (1,1), global mean (5,5)
        expected = np.array([1, 1, 1, 1, 5, 5, 1, 1, 9, 9, 1, 1, 5, 5], dtype=float)
        assert np.array_equal(out, expected)

    def test_constant_frames(self):
        frames = np.full((9, 4), 3.5)
        cfg = AggregationConfig(layer_lo=0, layer_hi=0, segments=3)
        out = aggregate_temporal(frames, cfg).reshape(7, 4)
        assert np.array_equal(out[0], [3.5] * 4)  # first segment mean
        assert np.array_equal(out[1], [0.0] * 4)  # first segment std
        assert np.array_equal(out[6], [3.5] * 4)  # global mean

    def test_default_config_dimensionality(self):
        cfg = AggregationConfig()
        assert cfg.output_dim(1024) == 7168

    def test_output_length_formula(self):
        rng = np.random.default_rng(4)
        stats_pool = ["segment_mean", "segment_std", "global_mean", "global_median"]
        for _ in range(30):
            segments = int(rng.integers(1, 5))
            t = int(rng.integers(segments, segments + 10))
            d = int(rng.integers(1, 8))
            k = int(rng.integers(1, len(stats_pool) + 1))
            stats = tuple(rng.choice(stats_pool, size=k, replace=False))
            cfg = AggregationConfig(layer_lo=0, layer_hi=0, segments=segments, stats=stats)
            out = aggregate_temporal(rng.normal(size=(t, d)), cfg)
            assert out.shape == (cfg.output_dim(d),)

    def test_permuting_within_segment_invariant(self):
        rng = np.random.default_rng(8)
        frames = rng.normal(size=(12, 3))
        cfg = AggregationConfig(layer_lo=0, layer_hi=0, segments=3)
        base = aggregate_temporal(frames, cfg)
        shuffled = frames.copy()
        for start in (0, 4, 8):
            perm = rng.permutation(4)
            shuffled[start : start + 4] = frames[start : start + 4][perm]
        out = aggregate_temporal(shuffled, cfg)
        assert np.allclose(out, base, atol=1e-12)

    def test_per_segment_constant_gives_zero_std(self):
        frames = np.repeat(np.array([[1.0], [2.0], [3.0]]), 5, axis=0)
        cfg = AggregationConfig(layer_lo=0, layer_hi=0, segments=3)
        out = aggregate_temporal(frames, cfg)
        stds = out[[1, 3, 5]]
        assert np.array_equal(stds, [0.0, 0.0, 0.0])

    def test_remainder_goes_to_early_segments(self):
        frames = np.arange(7.0).reshape(7, 1)
        cfg = AggregationConfig(layer_lo=0, layer_hi=0, segments=3, stats=("segment_mean",))
        out = aggregate_temporal(frames, cfg)
        # segment sizes 3,2,2 -> means 1, 3.5, 5.5
        assert np.array_equal(out, [1.0, 3.5, 5.5])

    def test_too_few_frames_rejected(self):
        cfg = AggregationConfig(layer_lo=0, layer_hi=0, segments=3)
        with pytest.raises(ValidationError):
            aggregate_temporal(np.zeros((2, 4)), cfg)

    def test_global_median_supported(self):
        frames = np.array([[1.0], [2.0], [100.0]])
        cfg = AggregationConfig(layer_lo=0, layer_hi=0, segments=1, stats=("global_median",))
        assert np.array_equal(aggregate_temporal(frames, cfg), [2.0])

    def test_unknown_stat_rejected(self):
        with pytest.raises(ValidationError):
            AggregationConfig(stats=("segment_kurtosis",))


class TestFeatureFiles:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        s = seq(rng.normal(size=(3, 5, 4)), "vid001")
        path = save_feature_file(s, tmp_path)
        loaded = load_feature_file(path)
        assert loaded.video_id == "vid001"
        assert np.array_equal(loaded.data, s.data)

    def test_header_checked(self, tmp_path):
        path = tmp_path / "x.feat"
        path.write_text("bogus header\n", encoding="utf-8")
        with pytest.raises(ValidationError):
            load_feature_file(path)

    def test_row_count_checked(self, tmp_path):
        path = tmp_path / "x.feat"
        path.write_text("layers=2 frames=2 dims=1\n1.0\n2.0\n3.0\n", encoding="utf-8")
        with pytest.raises(ValidationError):
            load_feature_file(path)

    def test_manifest_roundtrip(self, tmp_path):
        entries = [("v1", "a1", "v1.feat"), ("v2", "a2", "v2.feat")]
        path = tmp_path / "manifest.csv"
        save_feature_manifest(entries, path)
        assert load_feature_manifest(path) == entries

    def test_aggregate_sequence_pipeline(self):
        rng = np.random.default_rng(6)
        data = rng.normal(size=(4, 6, 2))
        s = seq(data)
        cfg = AggregationConfig(layer_lo=1, layer_hi=2, segments=2, stats=("segment_mean",))
        out = aggregate_sequence(s, cfg)
        manual = data[1:3].mean(axis=0)
        expected = np.concatenate([manual[:3].mean(axis=0), manual[3:].mean(axis=0)])
        assert np.allclose(out, expected, atol=1e-15)
