import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trinicon_ad.activity import (
    BlockPowers,
    DetectorConfig,
    block_powers,
    build_weight_matrices,
    classify_blocks,
    estimate_noise_floor,
    noise_floor_track,
    read_labels_csv,
    transition_mask,
    write_labels_csv,
)


def test_zero_blocks_have_zero_power():
    p = block_powers(np.zeros((3, 2, 9)), np.zeros((3, 2, 9)), 1, 5)
    assert np.all(p.ex == 0) and np.all(p.ey == 0)


def test_single_bin_power():
    X = np.zeros((1, 2, 8), complex)
    X[0, 0, 3] = 2.0
    p = block_powers(X, np.zeros_like(X), 3, 3)
    assert p.ex[0] == pytest.approx(2.0)


def test_block_powers_match_double_sum():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((4, 2, 17)) + 1j * rng.standard_normal((4, 2, 17))
    Y = rng.standard_normal((4, 2, 17)) + 1j * rng.standard_normal((4, 2, 17))
    k_l, k_u = 2, 11
    p = block_powers(X, Y, k_l, k_u)
    for m in range(4):
        ex = 0.0
        ey = [0.0, 0.0]
        for k in range(k_l, k_u + 1):
            ex += abs(X[m, 0, k]) ** 2 + abs(X[m, 1, k]) ** 2
            for q in range(2):
                ey[q] += abs(Y[m, q, k]) ** 2
        assert p.ex[m] == pytest.approx(ex / (2 * (k_u - k_l + 1)))
        np.testing.assert_allclose(p.ey[m], np.array(ey) / (k_u - k_l + 1))


def test_block_powers_reject_bad_range():
    X = np.zeros((2, 2, 9))
    with pytest.raises(ValueError):
        block_powers(X, X, 5, 9)
    with pytest.raises(ValueError):
        block_powers(X, X, 6, 5)
    with pytest.raises(ValueError):
        block_powers(X, np.zeros((3, 2, 9)), 1, 2)


def test_detector_band_in_bins():
    lo, hi = DetectorConfig().bins(512, 16000)
    assert (lo, hi) == (26, 896)
    assert DetectorConfig(k_l=3, k_u=9).bins(512, 16000) == (3, 9)
    with pytest.raises(ValueError):
        DetectorConfig(alpha=0.5)
    with pytest.raises(ValueError):
        DetectorConfig(rho=0.1, rho_confident=0.2)


def test_constant_power_noise_floor():
    assert estimate_noise_floor(np.full(100, 0.3)) == pytest.approx(1.5 * 0.3)


def test_noise_floor_of_speech_over_noise():
    rng = np.random.default_rng(3)
    p = 0.01
    # noise-only power estimates fluctuate like a chi-square with many bins
    ex = p * rng.chisquare(200, size=600) / 200
    # talk spurts of about 2 s separated by pauses of about 1 s (32 ms blocks)
    bursts = (np.arange(600) % 94) < 63
    ex[bursts] += rng.uniform(0.5, 5.0, size=bursts.sum())
    est = estimate_noise_floor(ex)
    assert p <= est <= 3 * p


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), gamma=st.floats(1e-6, 1e6))
def test_noise_floor_is_homogeneous(seed, gamma):
    ex = np.random.default_rng(seed).uniform(0.1, 2.0, 80)
    assert estimate_noise_floor(gamma * ex) == pytest.approx(gamma * estimate_noise_floor(ex), rel=1e-9)


def test_noise_floor_track_is_floored():
    track = noise_floor_track(np.zeros(20), 0.032)
    assert np.all(track == 1e-12)
    with pytest.raises(ValueError):
        estimate_noise_floor([])


def _labels(ex, ey1, ey2, e_noise=1e-3, **kw):
    powers = BlockPowers(np.array([ex], float), np.array([[ey1, ey2]], float))
    return tuple(classify_blocks(powers, e_noise, DetectorConfig(**kw))[0])


def test_classification_rules():
    cfg = DetectorConfig()
    assert _labels(0.5 * cfg.alpha * 0.2, 0.0, 0.0, e_noise=0.2) == (0, 0)
    assert _labels(1.0, 0.1, 0.9) == (1, 0)
    assert _labels(1.0, 0.9, 0.1) == (0, 1)
    assert _labels(1.0, 0.6, 0.7) == (1, 1)
    # both outputs low: not exactly one, so both active
    assert _labels(1.0, 0.1, 0.1) == (1, 1)


def test_confident_mode_drops_ambiguous_blocks():
    assert _labels(1.0, 0.1, 0.9, confident=True) == (1, 0)
    assert _labels(1.0, 0.2, 0.9, confident=True) == (0, 0)
    assert _labels(1.0, 0.6, 0.7, confident=True) == (1, 1)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), gamma=st.floats(1e-4, 1e4))
def test_classification_is_scale_invariant(seed, gamma):
    rng = np.random.default_rng(seed)
    ex = rng.uniform(0, 1, 50)
    ey = ex[:, None] * rng.uniform(0, 1.2, (50, 2))
    powers = BlockPowers(ex, ey)
    base = classify_blocks(powers, 0.05)
    scaled = classify_blocks(powers.scaled(gamma), 0.05 * gamma)
    np.testing.assert_array_equal(base, scaled)
    assert set(np.unique(base)) <= {0, 1}


def test_weight_matrix_example():
    B = build_weight_matrices(np.array([[1, 0], [0, 0], [1, 1], [0, 1]]), 4)
    np.testing.assert_allclose(B[0], np.diag([0.25, 0.0]))
    np.testing.assert_allclose(B[1], 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 200))
def test_weight_matrices_sum_to_activity_counts(seed, n):
    labels = np.random.default_rng(seed).integers(0, 2, (n, 2))
    B = build_weight_matrices(labels, n)
    counts = labels.sum(axis=0)
    np.testing.assert_allclose(B.sum(axis=0), np.diag(counts / n), atol=1e-12)
    assert set(np.unique(B)) <= {0.0, 1.0 / n}
    off = B.copy()
    off[:, 0, 0] = off[:, 1, 1] = 0
    assert np.all(off == 0)


def test_renormalized_weights():
    labels = np.array([[1, 0], [1, 1], [0, 1], [0, 1]])
    B = build_weight_matrices(labels, renormalize=True)
    np.testing.assert_allclose(B.sum(axis=0), np.eye(2))
    with pytest.raises(ValueError):
        build_weight_matrices(labels, 5)


def test_labels_csv_round_trip(tmp_path):
    labels = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.int8)
    write_labels_csv(tmp_path / "l.csv", labels)
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "block,eps1,eps2"
    np.testing.assert_array_equal(read_labels_csv(tmp_path / "l.csv"), labels)


def test_transition_mask_margins():
    truth = np.array([[0, 0]] * 5 + [[1, 0]] * 5)
    keep = transition_mask(truth, margin_before=2, margin_after=1)
    # the change happens at block 5: blocks 4..6 see it within their neighbourhood
    np.testing.assert_array_equal(keep, [1, 1, 1, 1, 0, 0, 0, 1, 1, 1])
