"""Synthetic speech-like test sources.

A talker is a stream of "syllables": a jittered glottal pulse train plus a
little aspiration noise, shaped by three formant resonators and a raised
cosine envelope, separated by short gaps.  Different seeds and base pitches
give talkers with distinct, strongly non-stationary spectra, which is what
second-order-statistics separation relies on.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

__all__ = ["speech_like", "talker_pair"]


def _resonator(freq, bw, fs):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    b = [1.0 - r]
    return b, a


def speech_like(
    duration: float,
    sample_rate: int = 16000,
    seed: int = 0,
    f0: float = 120.0,
    rms: float = 0.1,
) -> np.ndarray:
    """Generate ``duration`` seconds of a speech-like signal."""
    rng = np.random.default_rng(seed)
    fs = sample_rate
    n = int(round(duration * fs))
    out = np.zeros(n)
    pos = int(rng.integers(0, int(0.05 * fs) + 1))
    while pos < n:
        seg = int(rng.uniform(0.08, 0.28) * fs)
        stop = min(pos + seg, n)
        length = stop - pos
        if length < 16:
            break
        voiced = rng.random() < 0.8
        if voiced:
            pitch = f0 * rng.uniform(0.8, 1.25) * np.linspace(1.0, rng.uniform(0.85, 1.15), length)
            phase = np.cumsum(pitch / fs)
            excitation = np.diff(np.floor(phase), prepend=0.0)
            excitation += 0.05 * rng.standard_normal(length)
        else:
            excitation = 0.3 * rng.standard_normal(length)
        formants = (
            rng.uniform(300, 850),
            rng.uniform(900, 2300),
            rng.uniform(2400, 3400),
        )
        syl = np.zeros(length)
        for i, fr in enumerate(formants):
            b, a = _resonator(fr, 80 + 40 * i, fs)
            syl += lfilter(b, a, excitation) * (1.0, 0.5, 0.25)[i]
        if not voiced:
            syl += lfilter([1.0, -0.9], [1.0], excitation) * 0.5
        env = np.sin(np.linspace(0, np.pi, length)) ** 0.7
        syl *= env * rng.uniform(0.4, 1.0) / (np.std(syl) + 1e-12)
        out[pos:stop] += syl
        pos = stop + int(rng.uniform(0.01, 0.06) * fs)
    out -= out.mean()
    return out * (rms / (np.std(out) + 1e-12))


def talker_pair(duration: float, sample_rate: int = 16000, seed: int = 0) -> np.ndarray:
    """Two independent talkers (low and high pitch), ``(2, n_samples)``."""
    s1 = speech_like(duration, sample_rate, seed=2 * seed + 11, f0=115.0)
    s2 = speech_like(duration, sample_rate, seed=2 * seed + 12, f0=205.0)
    return np.stack([s1, s2])
