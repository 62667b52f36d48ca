import numpy as np
import pytest

from trinicon_ad.speech import speech_like, talker_pair


def test_level_and_length():
    x = speech_like(2.0, 16000, seed=1, rms=0.2)
    assert x.shape == (32000,)
    assert np.std(x) == pytest.approx(0.2, rel=1e-9)
    assert abs(x.mean()) < 1e-12


def test_talkers_are_deterministic_and_distinct():
    a = talker_pair(1.0, seed=3)
    b = talker_pair(1.0, seed=3)
    np.testing.assert_array_equal(a, b)
    assert abs(np.corrcoef(a)[0, 1]) < 0.2


def test_short_term_power_is_non_stationary():
    x = speech_like(4.0, 16000, seed=0)
    frames = x[: 4 * 16000 // 512 * 512].reshape(-1, 512)
    power = np.mean(frames**2, axis=1)
    # pauses between syllables make the block power vary over a wide range
    assert power.max() / np.median(power) > 3
    assert np.min(power) < 0.1 * np.median(power)
