"""Far-field spatial response of a demixing system.

For a plane wave from direction ``theta`` (degrees from broadside, same
convention as :mod:`trinicon_ad.room`) microphone ``p`` at x-offset ``d_p``
receives the wave with delay ``-d_p sin(theta) / c`` relative to the array
centre; the response of output ``q`` is ``sum_p W_pq(f) exp(-j 2 pi f tau_p)``.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .trinicon import DemixingFilter

__all__ = ["spatial_response", "write_directivity_csv"]


def spatial_response(
    W: DemixingFilter,
    angles_deg: Sequence[float],
    mic_spacing: float = 0.10,
    sample_rate: int = 16000,
    speed_of_sound: float = 343.0,
    n_fft: int = None,
):
    """Magnitude response in dB, ``(n_freqs, n_angles, 2)``, and the frequencies."""
    n_fft = n_fft or 4 * W.filter_len
    Wf = np.fft.rfft(W.taps, n=n_fft, axis=-1)  # (2, 2, K)
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    offsets = np.array([-mic_spacing / 2, mic_spacing / 2])
    th = np.deg2rad(np.asarray(angles_deg, dtype=float))
    # a source at negative angles reaches microphone 1 (negative x) first
    tau = -offsets[:, None] * np.sin(th)[None, :] / speed_of_sound  # (2, A)
    steer = np.exp(-2j * np.pi * freqs[:, None, None] * tau[None, :, :])  # (K, 2, A)
    resp = np.einsum("pqk,kpa->kaq", Wf, steer)
    return 20 * np.log10(np.maximum(np.abs(resp), 1e-12)), freqs


def write_directivity_csv(path: Union[str, Path], W: DemixingFilter, angles_deg=None, **kwargs) -> None:
    """Rows ``freq_hz, angle_deg, out1_db, out2_db`` for external plotting."""
    if angles_deg is None:
        angles_deg = np.arange(-90, 91, 5)
    db, freqs = spatial_response(W, angles_deg, **kwargs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz", "angle_deg", "out1_db", "out2_db"])
        for k, f in enumerate(freqs):
            for a, ang in enumerate(angles_deg):
                w.writerow([f"{f:.2f}", f"{float(ang):g}", f"{db[k, a, 0]:.3f}", f"{db[k, a, 1]:.3f}"])
