import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trinicon_ad.errors import InfeasibleScenarioError
from trinicon_ad.room import (
    ActivityPattern,
    RoomScenario,
    activity_envelope,
    generate_rir,
    image_source_rir,
    load_scenario,
    make_activity_pattern,
    rt60_to_reflection,
    save_scenario,
    schroeder_rt60,
    synthesize_mixture,
)
from trinicon_ad.speech import talker_pair


def test_sabine_reflection_example():
    # V = 144 m^3, S = 2 (36 + 24 + 24) = 168 m^2
    alpha = 0.161 * 144 / (168 * 0.25)
    assert alpha == pytest.approx(0.552, abs=1e-3)
    r = rt60_to_reflection((6, 6, 4), 0.25)
    assert r == pytest.approx(math.sqrt(1 - alpha), rel=1e-12)
    assert r == pytest.approx(0.6693, abs=1e-4)


def test_too_dry_room_is_rejected():
    with pytest.raises(InfeasibleScenarioError):
        rt60_to_reflection((6, 6, 4), 0.05)
    with pytest.raises(InfeasibleScenarioError):
        rt60_to_reflection((6, 6, 4), 0.0)


def test_direct_path_lands_on_integer_sample():
    src, mic = (2.0, 2.0, 1.5), (2.0 + 1.715, 2.0, 1.5)
    h = image_source_rir(src, mic, (6, 6, 4), 0.0, 16000, 200, 343.0)
    assert 1.715 / 343.0 * 16000 == pytest.approx(80.0)
    assert int(np.argmax(np.abs(h))) == 80
    assert h[80] == pytest.approx(1 / (4 * np.pi * 1.715), rel=1e-2)
    assert h[80] == pytest.approx(0.0464, abs=1e-4)
    others = np.delete(h, 80)
    assert np.max(np.abs(others)) < 1e-12


def _kernel_rir(images, fs, c, length):
    """Oracle: place each (position, order) image with the documented kernel."""
    h = np.zeros(length)
    n = np.arange(length)
    for dist, amp in images:
        t = n - dist / c * fs
        win = np.where(np.abs(t) < 40.5, 0.5 * (1 + np.cos(2 * np.pi * t / 81)), 0.0)
        h += amp * np.sinc(t) * win
    return h


def test_first_order_images_match_explicit_mirrors():
    dims = np.array([5.0, 4.0, 3.0])
    src = np.array([1.2, 2.5, 1.1])
    mic = np.array([3.3, 1.7, 1.6])
    r, fs, c, length = 0.8, 16000, 343.0, 600
    images = [(np.linalg.norm(src - mic), 1 / (4 * np.pi * np.linalg.norm(src - mic)))]
    for axis in range(3):
        for wall in (0.0, dims[axis]):
            img = src.copy()
            img[axis] = 2 * wall - src[axis]
            d = np.linalg.norm(img - mic)
            images.append((d, r / (4 * np.pi * d)))
    want = _kernel_rir(images, fs, c, length)
    got = image_source_rir(src, mic, dims, r, fs, length, c, max_order=1)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_schroeder_recovers_known_decay():
    fs = 16000
    t = np.arange(int(0.8 * fs)) / fs
    rng = np.random.default_rng(0)
    for rt in (0.2, 0.4):
        h = rng.standard_normal(t.size) * 10 ** (-3 * t / rt)
        assert schroeder_rt60(h, fs) == pytest.approx(rt, rel=0.05)
    with pytest.raises(ValueError):
        schroeder_rt60(np.zeros(100), fs)


def test_mirrored_directions_swap_microphones():
    a = RoomScenario(source_doas=(-40.0, 25.0))
    b = RoomScenario(source_doas=(40.0, -25.0))
    for u in range(2):
        for p in range(2):
            ha = generate_rir(a, u, p, reflection=0.6).taps
            hb = generate_rir(b, u, 1 - p, reflection=0.6).taps
            np.testing.assert_allclose(ha, hb, atol=1e-12)


def test_geometry_conventions():
    s = RoomScenario(source_doas=(-90.0, 0.0))
    mics = s.mic_positions()
    assert mics[0, 0] < mics[1, 0]
    assert np.linalg.norm(mics[1] - mics[0]) == pytest.approx(0.10)
    src = s.source_positions()
    # -90 degrees sits on the microphone-1 side, 0 degrees on broadside
    assert src[0, 0] == pytest.approx(3.0 - 1.5)
    assert src[1, 1] == pytest.approx(2.9 + 1.5)


def test_scenario_validation():
    with pytest.raises(InfeasibleScenarioError):
        RoomScenario(rt60=0.05)
    with pytest.raises(InfeasibleScenarioError):
        RoomScenario(source_distance=5.0)
    with pytest.raises(InfeasibleScenarioError):
        RoomScenario(occupancy=0.5, overlap=0.6)


def test_scenario_file_round_trip(tmp_path):
    s = RoomScenario(rt60=0.35, source_doas=(-45.0, 10.0), noise_db=-25.0, seed=4, rir_len=3000)
    save_scenario(s, tmp_path / "s.ini")
    assert load_scenario(tmp_path / "s.ini") == s
    assert load_scenario(tmp_path / "s.ini", seed=9).seed == 9
    (tmp_path / "bad.ini").write_text("[scenario]\ncolour = red\n")
    with pytest.raises(InfeasibleScenarioError):
        load_scenario(tmp_path / "bad.ini")


# -- activity pattern -------------------------------------------------------------


def test_full_occupancy_is_always_on():
    p = make_activity_pattern(100, occupancy=1.0, overlap=1.0, seed=3)
    assert np.all(p.labels == 1)


def test_pattern_is_deterministic():
    a = make_activity_pattern(600, seed=11)
    b = make_activity_pattern(600, seed=11)
    c = make_activity_pattern(600, seed=12)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.labels, c.labels)


@settings(max_examples=40, deadline=None)
@given(
    occ=st.floats(0.2, 1.0),
    frac=st.floats(0.0, 1.0),
    seed=st.integers(0, 10_000),
)
def test_pattern_fractions_hit_targets(occ, frac, seed):
    overlap = max(2 * occ - 1, 0.0) + frac * (occ - max(2 * occ - 1, 0.0))
    p = make_activity_pattern(625, occ, overlap, seed)
    assert np.all(np.abs(p.occupancy() - occ) <= 0.05)
    assert abs(p.overlap() - overlap) <= 0.05


def test_pattern_segments_are_contiguous():
    p = make_activity_pattern(625, seed=0)
    changes = np.count_nonzero(np.any(p.labels[1:] != p.labels[:-1], axis=1))
    assert changes < 30


def test_infeasible_pattern_is_rejected():
    with pytest.raises(InfeasibleScenarioError):
        make_activity_pattern(100, occupancy=0.9, overlap=0.1)
    with pytest.raises(InfeasibleScenarioError):
        make_activity_pattern(100, occupancy=0.5, overlap=0.7)


def test_envelope_follows_pattern_with_short_ramps():
    labels = np.array([[0, 1], [1, 1], [1, 0], [0, 0]], dtype=np.int8)
    env = activity_envelope(ActivityPattern(labels, 400), 1600, 16000, ramp_ms=5.0)
    assert env.shape == (2, 1600)
    assert np.all(env[0, :300] == 0) and np.all(env[0, 500:700] == 1)
    assert np.all((env >= 0) & (env <= 1))
    assert 0 < env[0, 400] < 1


# -- mixture ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def mixture():
    scenario = RoomScenario(rt60=0.15, duration=4.0, seed=2)
    return synthesize_mixture(scenario, talker_pair(4.0, 16000, seed=2))


def test_image_powers_are_equal(mixture):
    p1 = np.mean(mixture.images[0] ** 2)
    p2 = np.mean(mixture.images[1] ** 2)
    assert p1 / p2 == pytest.approx(1.0, abs=1e-6)


def test_noise_level(mixture):
    speech = mixture.images.sum(axis=0)
    level = 10 * np.log10(np.mean(mixture.noise**2) / np.mean(speech**2))
    assert level == pytest.approx(-30.0, abs=0.5)


def test_superposition_is_exact(mixture):
    rebuilt = mixture.images[0] + mixture.images[1] + mixture.noise
    np.testing.assert_allclose(mixture.mic.samples, rebuilt, atol=1e-12)
    assert mixture.references(1).shape == (2, mixture.mic.n_samples)


def test_mixture_is_deterministic(mixture):
    scenario = RoomScenario(rt60=0.15, duration=4.0, seed=2)
    again = synthesize_mixture(scenario, talker_pair(4.0, 16000, seed=2))
    np.testing.assert_array_equal(again.mic.samples, mixture.mic.samples)


def test_noiseless_mixture():
    scenario = RoomScenario(rt60=0.15, duration=1.0, noise_db=-math.inf, occupancy=1.0, overlap=1.0)
    mix = synthesize_mixture(scenario, talker_pair(1.0, 16000))
    assert np.all(mix.noise == 0)


def test_silent_source_is_rejected():
    scenario = RoomScenario(rt60=0.15, duration=1.0, occupancy=1.0, overlap=1.0)
    s = talker_pair(1.0, 16000)
    s[1] = 0
    with pytest.raises(InfeasibleScenarioError):
        synthesize_mixture(scenario, s)
    with pytest.raises(ValueError):
        synthesize_mixture(scenario, s[:1])
