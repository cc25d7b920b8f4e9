import numpy as np
import pytest

from spikeconv.encoding import SpikeWave
from spikeconv.errors import ConfigError
from spikeconv.network import (
    ConvLayer,
    ConvSpec,
    PoolLayer,
    PoolSpec,
    ThresholdNoise,
    global_pool_features,
    jitter_threshold,
    run_wave,
    threshold_field,
)
from tests.reference import dense_run, random_fixture


def wave_from(buckets, shape, t):
    return SpikeWave.from_step_arrays([np.asarray(b, dtype=np.int16).reshape(-1, 3) for b in buckets], shape, t)


def engine_layers(descs):
    layers = []
    in_maps = None
    for kind, *rest in descs:
        if kind == "conv":
            w, thr = rest
            spec = ConvSpec(maps=w.shape[0], window=w.shape[2:], threshold=thr)
            layers.append(ConvLayer(spec, in_maps=w.shape[1], weights=w))
            in_maps = w.shape[0]
        else:
            window, stride = rest
            layers.append(PoolLayer(PoolSpec(window=window, stride=stride)))
    return layers


def spike_sets_of(wave):
    return [set(map(tuple, wave.bucket(t).tolist())) for t in range(wave.time_steps)]


# ---------------------------------------------------------------------------
# convolution layer
# ---------------------------------------------------------------------------

class TestConvIntegration:
    def test_single_spike_paints_flipped_kernel(self):
        w = np.array([[[[1.0, 2.0], [3.0, 4.0]]]]) / 8.0
        layer = ConvLayer(ConvSpec(maps=1, window=(2, 2), threshold=100.0), in_maps=1, weights=w)
        layer.reset((1, 3, 3))
        layer.integrate(np.array([[0, 1, 1]], dtype=np.int16))
        # V(oy, ox) += W[y - oy, x - ox]
        expect = np.array([[[4.0, 3.0], [2.0, 1.0]]]) / 8.0
        np.testing.assert_array_equal(layer.potentials, expect)

    def test_border_spike_clips_window(self):
        w = np.array([[[[1.0, 2.0], [3.0, 4.0]]]]) / 8.0
        layer = ConvLayer(ConvSpec(maps=1, window=(2, 2), threshold=100.0), in_maps=1, weights=w)
        layer.reset((1, 3, 3))
        layer.integrate(np.array([[0, 0, 0]], dtype=np.int16))
        expect = np.zeros((1, 2, 2))
        expect[0, 0, 0] = 1.0 / 8.0  # only W[0,0] lands inside the grid
        np.testing.assert_array_equal(layer.potentials, expect)

    def test_potentials_accumulate_without_leak(self):
        w = np.full((1, 1, 1, 1), 0.25)
        layer = ConvLayer(ConvSpec(maps=1, window=(1, 1), threshold=10.0), in_maps=1, weights=w)
        layer.reset((1, 1, 1))
        for _ in range(3):
            layer.integrate(np.array([[0, 0, 0]], dtype=np.int16))
        assert layer.potentials[0, 0, 0] == 0.75


class TestConvFire:
    def two_map_point_layer(self, w0, w1, thr=0.5):
        w = np.array([[[[w0]]], [[[w1]]]])
        layer = ConvLayer(ConvSpec(maps=2, window=(1, 1), threshold=thr), in_maps=1, weights=w)
        layer.reset((1, 1, 1))
        return layer

    def test_fires_on_crossing_and_resets(self):
        layer = self.two_map_point_layer(0.6, 0.1)
        layer.integrate(np.array([[0, 0, 0]], dtype=np.int16))
        out = layer.fire(0)
        assert out.tolist() == [[0, 0, 0]]
        assert layer.potentials[0, 0, 0] == 0.0
        assert layer.blocked[0, 0]

    def test_tie_goes_to_lowest_map(self):
        layer = self.two_map_point_layer(0.6, 0.6)
        layer.integrate(np.array([[0, 0, 0]], dtype=np.int16))
        out = layer.fire(0)
        assert out.tolist() == [[0, 0, 0]]

    def test_higher_potential_beats_lower_map(self):
        layer = self.two_map_point_layer(0.6, 0.7)
        layer.integrate(np.array([[0, 0, 0]], dtype=np.int16))
        out = layer.fire(0)
        assert out.tolist() == [[1, 0, 0]]

    def test_lateral_inhibition_persists_for_image(self):
        w = np.array([[[[0.6, 0.0]]], [[[0.0, 0.6]]]])  # map0 sees x, map1 sees x+1
        layer = ConvLayer(ConvSpec(maps=2, window=(1, 2), threshold=0.5), in_maps=1, weights=w)
        layer.reset((1, 1, 2))
        layer.integrate(np.array([[0, 0, 0]], dtype=np.int16))
        assert layer.fire(0).tolist() == [[0, 0, 0]]
        # second input spike drives map1 over threshold at the same location
        layer.integrate(np.array([[0, 0, 1]], dtype=np.int16))
        assert layer.fire(1).tolist() == []
        assert layer.final_potentials()[1, 0, 0] == 0.0

    def test_fired_neuron_never_fires_again(self):
        w = np.array([[[[0.6, 0.6]]]])
        layer = ConvLayer(ConvSpec(maps=1, window=(1, 2), threshold=0.5), in_maps=1, weights=w)
        layer.reset((1, 1, 2))
        layer.integrate(np.array([[0, 0, 0]], dtype=np.int16))
        assert len(layer.fire(0)) == 1
        layer.integrate(np.array([[0, 0, 1]], dtype=np.int16))
        assert len(layer.fire(1)) == 0

    def test_equal_threshold_crossing_fires(self):
        # V == threshold exactly counts as a crossing
        layer = self.two_map_point_layer(0.5, 0.0, thr=0.5)
        layer.integrate(np.array([[0, 0, 0]], dtype=np.int16))
        assert len(layer.fire(0)) == 1

    def test_potential_at_fire_time_recorded(self):
        layer = self.two_map_point_layer(0.8, 0.1)
        layer.integrate(np.array([[0, 0, 0]], dtype=np.int16))
        layer.fire(0)
        maps, ys, xs, steps, pots = layer.fire_record.stacked()
        assert pots.tolist() == [0.8]
        assert steps.tolist() == [0]


class TestPoolLayer:
    def test_first_spike_relayed_once(self):
        pool = PoolLayer(PoolSpec(window=(2, 2), stride=2))
        pool.reset((1, 4, 4))
        out = pool.step(np.array([[0, 0, 0]], dtype=np.int16))
        assert out.tolist() == [[0, 0, 0]]
        # later afferent in the same window is swallowed
        out = pool.step(np.array([[0, 1, 1]], dtype=np.int16))
        assert out.tolist() == []

    def test_same_step_duplicates_collapse(self):
        pool = PoolLayer(PoolSpec(window=(2, 2), stride=2))
        pool.reset((1, 4, 4))
        out = pool.step(np.array([[0, 0, 0], [0, 1, 1]], dtype=np.int16))
        assert out.tolist() == [[0, 0, 0]]
        assert pool.spike_count == 1

    def test_overlapping_windows_fire_both_cells(self):
        # window 2, stride 1: input row 1 feeds pooled rows 0 and 1
        pool = PoolLayer(PoolSpec(window=(2, 2), stride=1))
        pool.reset((1, 3, 3))
        out = pool.step(np.array([[0, 1, 1]], dtype=np.int16))
        assert sorted(out.tolist()) == [[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1]]

    def test_trailing_rows_outside_any_window_are_dropped(self):
        # input height 5, window 2 stride 2 -> pooled height 2 covers rows 0..3
        pool = PoolLayer(PoolSpec(window=(2, 2), stride=2))
        pool.reset((1, 5, 5))
        out = pool.step(np.array([[0, 4, 0]], dtype=np.int16))
        assert out.tolist() == []

    def test_maps_pool_independently(self):
        pool = PoolLayer(PoolSpec(window=(2, 2), stride=2))
        pool.reset((2, 4, 4))
        out = pool.step(np.array([[0, 0, 0], [1, 0, 1]], dtype=np.int16))
        assert sorted(out.tolist()) == [[0, 0, 0], [1, 0, 0]]


class TestSpecValidation:
    def test_conv_spec_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            ConvSpec(maps=0, window=(5, 5), threshold=10.0)
        with pytest.raises(ConfigError):
            ConvSpec(maps=4, window=(0, 5), threshold=10.0)
        with pytest.raises(ConfigError):
            ConvSpec(maps=4, window=(5, 5), threshold=0.0)

    def test_pool_spec_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            PoolSpec(window=(2, 2), stride=0)
        with pytest.raises(ConfigError):
            PoolSpec(window=(0, 2), stride=1)

    def test_conv_window_must_fit_input(self):
        layer = ConvLayer(ConvSpec(maps=1, window=(5, 5), threshold=1.0), in_maps=1)
        with pytest.raises(ConfigError):
            layer.reset((1, 4, 10))

    def test_conv_channel_mismatch(self):
        layer = ConvLayer(ConvSpec(maps=1, window=(2, 2), threshold=1.0), in_maps=2)
        with pytest.raises(ConfigError):
            layer.reset((3, 8, 8))


# ---------------------------------------------------------------------------
# threshold noise
# ---------------------------------------------------------------------------

class TestThresholdNoise:
    def test_zero_alpha_returns_exact_base(self):
        assert threshold_field(ThresholdNoise(0.0, seed=1), 15.0, (2, 3, 3), 5, 0) == 15.0
        assert threshold_field(None, 15.0, (2, 3, 3), 5, 0) == 15.0
        assert jitter_threshold(ThresholdNoise(0.0, 1), 15.0, 7, 5, 0, (2, 3, 3)) == 15.0

    def test_same_key_same_field(self):
        n = ThresholdNoise(0.2, seed=42)
        a = threshold_field(n, 10.0, (3, 4, 4), image_key=9, layer_index=1)
        b = threshold_field(n, 10.0, (3, 4, 4), image_key=9, layer_index=1)
        np.testing.assert_array_equal(a, b)

    def test_different_image_different_field(self):
        n = ThresholdNoise(0.2, seed=42)
        a = threshold_field(n, 10.0, (3, 4, 4), image_key=1, layer_index=0)
        b = threshold_field(n, 10.0, (3, 4, 4), image_key=2, layer_index=0)
        assert not np.array_equal(a, b)

    def test_jitter_bounded_by_alpha(self):
        n = ThresholdNoise(0.3, seed=7)
        f = threshold_field(n, 10.0, (4, 8, 8), image_key=3, layer_index=0)
        assert np.all(np.abs(f - 10.0) <= 3.0)

    def test_scalar_accessor_matches_field(self):
        n = ThresholdNoise(0.5, seed=11)
        shape = (2, 5, 5)
        f = threshold_field(n, 8.0, shape, image_key=4, layer_index=1)
        for nid in [0, 7, 31, 49]:
            assert jitter_threshold(n, 8.0, nid, 4, 1, shape) == f.reshape(-1)[nid]

    def test_alpha_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            ThresholdNoise(alpha=1.5)


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

class TestRunWave:
    def test_replay_after_reset_is_identical(self):
        descs, wave = random_fixture(101)
        layers = engine_layers(descs)
        r1 = run_wave(layers, wave, record_outputs=(0, 1, 2))
        pots1 = [l.final_potentials().copy() for l in layers if isinstance(l, ConvLayer)]
        r2 = run_wave(layers, wave, record_outputs=(0, 1, 2))
        pots2 = [l.final_potentials().copy() for l in layers if isinstance(l, ConvLayer)]
        assert r1.spike_counts == r2.spike_counts
        for i in r1.recorded:
            assert r1.recorded[i] == r2.recorded[i]
        for a, b in zip(pots1, pots2):
            np.testing.assert_array_equal(a, b)

    def test_stop_after_leaves_deeper_layers_idle(self):
        descs, wave = random_fixture(102)
        layers = engine_layers(descs)
        res = run_wave(layers, wave, stop_after=0)
        assert res.spike_counts[1] == -1
        assert res.spike_counts[2] == -1
        assert res.spike_counts[0] >= 0

    def test_one_spike_per_neuron_and_location(self):
        for seed in range(103, 108):
            descs, wave = random_fixture(seed)
            layers = engine_layers(descs)
            res = run_wave(layers, wave, record_outputs=(0, 2))
            for idx in (0, 2):
                out = res.recorded[idx]
                out.validate()  # one spike per neuron
                e = out.events
                if len(e):
                    locs = e[:, 2].astype(np.int64) * 10000 + e[:, 3]
                    assert len(np.unique(locs)) == len(locs)  # one map per location

    def test_infinite_last_conv_is_silent_and_integrates_everything(self):
        descs, wave = random_fixture(109)
        layers = engine_layers(descs)
        res = run_wave(layers, wave, infinite_last_conv=True, record_outputs=(2,))
        assert res.spike_counts[2] == 0
        assert res.recorded[2].total_spikes() == 0
        assert not layers[2].blocked.any()

    def test_matches_dense_reference(self):
        for seed in range(110, 122):
            descs, wave = random_fixture(seed)
            layers = engine_layers(descs)
            res = run_wave(layers, wave, record_outputs=(0, 1, 2))
            want_spikes, want_pots = dense_run(descs, wave)
            for i in range(3):
                assert spike_sets_of(res.recorded[i]) == want_spikes[i], f"seed {seed} layer {i}"
            conv_ids = [0, 2]
            for i in conv_ids:
                got = layers[i].final_potentials()
                np.testing.assert_array_equal(got, want_pots[i], err_msg=f"seed {seed} layer {i}")

    def test_matches_dense_reference_infinite_last(self):
        for seed in range(122, 126):
            descs, wave = random_fixture(seed)
            layers = engine_layers(descs)
            run_wave(layers, wave, infinite_last_conv=True)
            want_spikes, want_pots = dense_run(descs, wave, infinite_last_conv=True)
            np.testing.assert_array_equal(layers[2].final_potentials(), want_pots[2])


class TestGlobalPool:
    def test_single_map_equals_brute_force(self):
        rng = np.random.default_rng(55)
        w = rng.integers(0, 1025, size=(1, 1, 3, 3)) / 1024.0
        descs = [("conv", w, 1000.0)]
        layers = engine_layers(descs)
        n = 8 * 8
        chosen = rng.choice(n, size=20, replace=False)
        steps = rng.integers(0, 5, size=20)
        buckets = [
            np.stack([np.zeros_like(s := chosen[steps == t]), s // 8, s % 8], axis=1)
            for t in range(5)
        ]
        wave = SpikeWave.from_step_arrays([b.astype(np.int16) for b in buckets], (1, 8, 8), 5)
        run_wave(layers, wave, infinite_last_conv=True)
        feats = global_pool_features(layers[0])
        # brute force: correlate the total spike-count plane with the kernel
        plane = np.zeros((8, 8))
        plane[chosen // 8, chosen % 8] = 1.0
        best = -np.inf
        for y in range(6):
            for x in range(6):
                best = max(best, float(np.sum(plane[y : y + 3, x : x + 3] * w[0, 0])))
        assert feats.shape == (1,)
        assert feats[0] == best

    def test_feature_per_map(self):
        descs, wave = random_fixture(56)
        layers = engine_layers(descs)
        run_wave(layers, wave, infinite_last_conv=True)
        feats = global_pool_features(layers[2])
        assert feats.shape == (layers[2].spec.maps,)
        assert np.all(feats >= 0)
