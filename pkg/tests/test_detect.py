"""Hard-decision detection and grid-threshold derivation."""

import numpy as np
import pytest

from flashlab.channel import NoiseFamily, OperatingPoint, make_dataset, mlc_params
from flashlab.detect import (
    DpConfig,
    derive_thresholds_brute,
    derive_thresholds_dp,
    hamming_cost,
    rnn_detect,
    round_to_symbols,
    threshold_detect,
)
from flashlab.neuralnet import TrainConfig, init_xavier, train
from flashlab.oracle import ThresholdSet


def test_round_to_symbols_clamps():
    est = np.array([-3.0, -0.4, 0.4, 1.6, 2.5, 9.0])
    assert round_to_symbols(est, 2).tolist() == [0, 0, 0, 2, 2, 3]
    assert round_to_symbols(est, 3).tolist() == [0, 0, 0, 2, 2, 7]


def test_round_to_symbols_dtype():
    out = round_to_symbols(np.array([1.2]), 2)
    assert out.dtype == np.int64


def test_threshold_detect_regions():
    t = ThresholdSet(np.array([1.0, 2.0, 3.0]))
    v = np.array([0.5, 1.5, 2.5, 3.5])
    assert threshold_detect(t, v).tolist() == [0, 1, 2, 3]


def test_threshold_detect_tie_goes_up():
    t = ThresholdSet(np.array([1.0, 2.0]))
    assert threshold_detect(t, np.array([1.0, 2.0])).tolist() == [1, 2]


def test_threshold_detect_extremes():
    t = ThresholdSet(np.array([1.0, 2.0, 3.0]))
    assert threshold_detect(t, np.array([-100.0])).tolist() == [0]
    assert threshold_detect(t, np.array([100.0])).tolist() == [3]


def test_threshold_detect_monotone():
    rng = np.random.default_rng(2)
    t = ThresholdSet(np.sort(rng.uniform(0, 4, 7)))
    v = np.sort(rng.uniform(-1, 5, 200))
    out = threshold_detect(t, v)
    assert np.all(np.diff(out) >= 0)


def test_threshold_detect_matches_density_crossing_regions():
    # thresholds at pairwise density-equality points = per-sample argmax rule
    from flashlab.channel import StateMoments
    from flashlab.oracle import state_pdf

    means = np.array([0.0, 1.5, 3.0, 4.5])
    stds = np.array([0.3, 0.3, 0.3, 0.3])
    m = StateMoments(
        means=means, variances=stds**2, family=NoiseFamily.GAUSSIAN, gamma_shape=6.0
    )
    mids = (means[:-1] + means[1:]) / 2  # equal sigma: crossings are midpoints
    t = ThresholdSet(mids)
    rng = np.random.default_rng(0)
    v = rng.uniform(-0.5, 5.0, 500)
    detected = threshold_detect(t, v)
    densities = np.stack([state_pdf(m, s, v) for s in range(4)])
    assert np.array_equal(detected, np.argmax(densities, axis=0))


def test_rnn_detect_handles_partial_window():
    p = init_xavier(0)
    v = np.linspace(1.0, 4.0, 47)  # not a multiple of 20
    out = rnn_detect(p, v, q=2, window=20)
    assert out.shape == (47,)
    assert np.all((0 <= out) & (out <= 3))


def test_rnn_detect_prefix_consistency():
    # padding the tail must not change decisions for full windows
    p = init_xavier(4)
    v = np.linspace(1.0, 4.0, 60)
    full = rnn_detect(p, v, q=2)
    partial = rnn_detect(p, v[:50], q=2)
    assert np.array_equal(partial[:40], full[:40])


def test_dp_config_validation():
    with pytest.raises(ValueError):
        DpConfig(m=2)
    with pytest.raises(ValueError):
        DpConfig(search_range=(2.0, 1.0))


def test_dp_rejects_bad_args():
    with pytest.raises(ValueError):
        derive_thresholds_dp(np.array([1.0, 2.0]), np.array([0]), DpConfig(m=10))
    with pytest.raises(ValueError):
        derive_thresholds_dp(np.array([1.0, 2.0]), np.array([0, 5]), DpConfig(m=10), n_states=4)
    with pytest.raises(ValueError):
        derive_thresholds_dp(np.array([1.0] * 4), np.array([0, 0, 0, 0]), DpConfig(m=10))
    with pytest.raises(ValueError):  # 15 thresholds need m >= 16
        derive_thresholds_dp(
            np.linspace(0, 1, 40), np.zeros(40, dtype=int), DpConfig(m=10), n_states=16
        )


def test_dp_separable_clusters_zero_cost():
    rng = np.random.default_rng(1)
    v = np.concatenate([rng.normal(c, 0.05, 200) for c in (1.0, 2.0, 3.0, 4.0)])
    ref = np.repeat(np.arange(4), 200)
    t = derive_thresholds_dp(v, ref, DpConfig(m=50), n_states=4)
    assert hamming_cost(t, v, ref) == 0


def test_dp_centering_on_separable_gap():
    rng = np.random.default_rng(5)
    v = np.concatenate([rng.normal(1.0, 0.03, 400), rng.normal(3.0, 0.03, 400)])
    ref = np.concatenate([np.zeros(400, np.int64), np.ones(400, np.int64)])
    t = derive_thresholds_dp(v, ref, DpConfig(m=200), n_states=2)
    assert abs(t.values[0] - 2.0) < 0.1  # mid-gap, not hugging a cluster


def test_dp_equals_brute_on_random_instances():
    rng = np.random.default_rng(0)
    for trial in range(300):
        n = int(rng.integers(30, 300))
        v = rng.normal(2.5, 1.0, n)
        ref = rng.integers(0, 4, n).astype(np.int64)
        cfg = DpConfig(m=int(rng.integers(5, 13)))
        a = derive_thresholds_dp(v, ref, cfg, n_states=4)
        b = derive_thresholds_brute(v, ref, cfg, n_states=4)
        assert np.array_equal(a.values, b.values), f"trial {trial}"
        assert hamming_cost(a, v, ref) == hamming_cost(b, v, ref)


def test_dp_equals_brute_binary_and_octal():
    rng = np.random.default_rng(9)
    for n_states in (2, 8):
        for trial in range(30):
            n = int(rng.integers(50, 200))
            v = rng.uniform(0, 5, n)
            ref = rng.integers(0, n_states, n).astype(np.int64)
            cfg = DpConfig(m=12)
            a = derive_thresholds_dp(v, ref, cfg, n_states=n_states)
            b = derive_thresholds_brute(v, ref, cfg, n_states=n_states)
            assert np.array_equal(a.values, b.values)


def test_dp_deterministic():
    rng = np.random.default_rng(3)
    v = rng.normal(2.5, 1.0, 500)
    ref = rng.integers(0, 4, 500).astype(np.int64)
    a = derive_thresholds_dp(v, ref, DpConfig(m=100), n_states=4)
    b = derive_thresholds_dp(v, ref, DpConfig(m=100), n_states=4)
    assert np.array_equal(a.values, b.values)


def test_dp_respects_search_range():
    rng = np.random.default_rng(8)
    v = rng.normal(2.0, 0.5, 300)
    ref = (v > 2.0).astype(np.int64)
    cfg = DpConfig(m=40, search_range=(0.0, 4.0))
    t = derive_thresholds_dp(v, ref, cfg, n_states=2)
    assert 0.0 < t.values[0] < 4.0


def test_dp_output_strictly_increasing():
    rng = np.random.default_rng(12)
    for _ in range(20):
        v = rng.uniform(0, 5, 100)
        ref = rng.integers(0, 8, 100).astype(np.int64)
        t = derive_thresholds_dp(v, ref, DpConfig(m=30), n_states=8)
        assert np.all(np.diff(t.values) > 0)
        assert len(t) == 7


def test_pipeline_cost_matches_detection():
    # deriving thresholds against network decisions, then detecting with
    # them, disagrees with the network exactly as often as the DP reported
    params = mlc_params()
    ds = make_dataset(params, 5000, OperatingPoint(0, 0, NoiseFamily.GAUSSIAN), seed=2)
    model, _ = train(ds, TrainConfig(epochs=3, seed=4), init_xavier(1))
    decisions = rnn_detect(model, ds.voltages, 2)
    t = derive_thresholds_dp(ds.voltages, decisions, DpConfig(m=100), n_states=4)
    cost = hamming_cost(t, ds.voltages, decisions)
    brute = derive_thresholds_brute(
        ds.voltages, decisions, DpConfig(m=12), n_states=4
    )
    assert cost <= hamming_cost(brute, ds.voltages, decisions)  # finer grid at least as good
    assert cost == np.count_nonzero(threshold_detect(t, ds.voltages) != decisions)
