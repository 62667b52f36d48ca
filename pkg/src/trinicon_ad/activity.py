"""Multi-source activity detection from a preliminary separation.

Per block, the band-limited power of the inputs is compared with the powers
of the two separated outputs.  Output ``p`` is assumed to suppress source
``p``, so a block in which only output ``p`` is much weaker than the input is
taken as "only source p active".  Blocks whose input power stays near the
noise floor are silent; everything else counts as both sources active.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

__all__ = [
    "BlockPowers",
    "DetectorConfig",
    "block_powers",
    "noise_floor_track",
    "estimate_noise_floor",
    "classify_blocks",
    "build_weight_matrices",
    "write_labels_csv",
    "read_labels_csv",
    "hop_seconds",
    "transition_mask",
]

NOISE_FLOOR_MIN = 1e-12


@dataclass
class BlockPowers:
    """Mean squared spectral magnitudes per block.

    Attributes:
        ex: input power ``(n_blocks,)`` averaged over both microphones.
        ey: output powers ``(n_blocks, 2)``.
    """

    ex: np.ndarray
    ey: np.ndarray

    def scaled(self, gamma: float) -> "BlockPowers":
        return BlockPowers(self.ex * gamma, self.ey * gamma)


@dataclass
class DetectorConfig:
    """Detector thresholds.

    Attributes:
        kl_hz, ku_hz: band edges; converted to bins with :meth:`bins` unless
            ``k_l``/``k_u`` are given explicitly.
        alpha: multiplier on the noise floor below which a block is silent.
        rho: output/input power ratio that counts as "suppressed".
        rho_confident: stricter ratio used when ``confident`` is set.
        confident: label a block single-source only below ``rho_confident``
            and drop blocks that fall between the two ratios.
        smoothing: recursive smoothing constant of the noise-floor tracker.
        window_s: sliding-minimum window in seconds.
        bias: multiplier compensating the downward bias of the minimum.
    """

    kl_hz: float = 200.0
    ku_hz: float = 7000.0
    k_l: Optional[int] = None
    k_u: Optional[int] = None
    alpha: float = 3.0
    rho: float = 0.25
    rho_confident: float = 0.15
    confident: bool = False
    smoothing: float = 0.8
    window_s: float = 1.5
    bias: float = 1.5

    def __post_init__(self):
        if self.alpha <= 1:
            raise ValueError("alpha must exceed 1")
        if not 0 < self.rho_confident <= self.rho < 1:
            raise ValueError("need 0 < rho_confident <= rho < 1")

    def bins(self, filter_len: int, sample_rate: int):
        """Inclusive bin range ``(k_l, k_u)`` for a 4L-point transform."""
        n_fft = 4 * filter_len
        k_l = self.k_l if self.k_l is not None else int(round(self.kl_hz * n_fft / sample_rate))
        k_u = self.k_u if self.k_u is not None else int(round(self.ku_hz * n_fft / sample_rate))
        k_u = min(k_u, 2 * filter_len)
        k_l = max(k_l, 1)
        if not 1 <= k_l < k_u <= 2 * filter_len:
            raise ValueError(f"invalid bin range [{k_l}, {k_u}] for L={filter_len}")
        return k_l, k_u

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def block_powers(X: np.ndarray, Y: np.ndarray, k_l: int, k_u: int) -> BlockPowers:
    """Band powers of aligned input and output block spectra.

    ``E_x = sum(|X_1|^2 + |X_2|^2) / (2 (k_u - k_l + 1))`` and
    ``E_yp = sum |Y_p|^2 / (k_u - k_l + 1)`` over bins ``k_l .. k_u``.

    Args:
        X, Y: spectra ``(n_blocks, 2, n_bins)``; ``n_bins`` may be the full
            4L or the one-sided ``2L + 1``.
    """
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("input and output block sequences differ in length")
    n_bins = min(X.shape[-1], Y.shape[-1])
    if not 0 <= k_l <= k_u < n_bins:
        raise ValueError(f"bin range [{k_l}, {k_u}] outside 0..{n_bins - 1}")
    band = slice(k_l, k_u + 1)
    width = k_u - k_l + 1
    ex = (np.abs(X[:, :, band]) ** 2).sum(axis=(1, 2)) / (2 * width)
    ey = (np.abs(Y[:, :, band]) ** 2).sum(axis=2) / width
    return BlockPowers(ex, ey)


def noise_floor_track(ex, hop_s: float, smoothing: float = 0.8, window_s: float = 1.5, bias: float = 1.5) -> np.ndarray:
    """Biased sliding minimum of the recursively smoothed input power."""
    ex = np.asarray(ex, dtype=np.float64)
    smooth = np.empty_like(ex)
    acc = ex[0]
    for m, v in enumerate(ex):
        acc = smoothing * acc + (1 - smoothing) * v
        smooth[m] = acc
    width = max(1, int(round(window_s / hop_s)))
    if width >= smooth.size:
        mins = np.full_like(smooth, smooth.min())
    else:
        win = np.lib.stride_tricks.sliding_window_view(np.pad(smooth, (width - 1, 0), mode="edge"), width)
        mins = win.min(axis=1)
    return np.maximum(bias * mins, NOISE_FLOOR_MIN)


def estimate_noise_floor(ex, hop_s: float = 0.032, smoothing: float = 0.8, window_s: float = 1.5, bias: float = 1.5) -> float:
    """Scalar background-noise power for the silence threshold.

    The lowest value of :func:`noise_floor_track`.  A single threshold is
    used for the whole signal; the sliding window only matters for the track.
    """
    ex = np.asarray(ex, dtype=np.float64)
    if ex.size == 0:
        raise ValueError("empty power sequence")
    return float(noise_floor_track(ex, hop_s, smoothing, window_s, bias).min())


def classify_blocks(powers: BlockPowers, e_noise, cfg: Optional[DetectorConfig] = None) -> np.ndarray:
    """Activity labels ``(n_blocks, 2)`` with entries in {0, 1}.

    * ``E_x < alpha * E_noise``: both sources inactive.
    * exactly one output with ``E_yp <= rho * E_x``: only source ``p`` active.
    * otherwise both active.
    """
    cfg = cfg or DetectorConfig()
    ex = np.asarray(powers.ex, dtype=np.float64)
    ey = np.asarray(powers.ey, dtype=np.float64)
    silent = ex < cfg.alpha * np.asarray(e_noise)
    ratio = cfg.rho_confident if cfg.confident else cfg.rho
    low = ey <= ratio * ex[:, None]
    single = low.sum(axis=1) == 1

    labels = np.ones((ex.size, 2), dtype=np.int8)
    labels[single] = low[single].astype(np.int8)
    if cfg.confident:
        ambiguous = ~single & np.any((ey > ratio * ex[:, None]) & (ey <= cfg.rho * ex[:, None]), axis=1)
        labels[ambiguous] = 0
    labels[silent] = 0
    return labels


def build_weight_matrices(labels, n_sig: Optional[int] = None, renormalize: bool = False) -> np.ndarray:
    """Per-block diagonal weights ``B(m) = diag(eps_1(m), eps_2(m)) / N_sig``.

    With ``renormalize`` each source's column is divided by its own count of
    active blocks instead of ``N_sig``.

    Returns:
        Array ``(n_blocks, 2, 2)``.
    """
    labels = np.asarray(labels)
    n_sig = labels.shape[0] if n_sig is None else n_sig
    if labels.shape != (n_sig, 2):
        raise ValueError(f"labels must have shape ({n_sig}, 2)")
    if renormalize:
        counts = np.maximum(labels.sum(axis=0), 1)
        diag = labels / counts
    else:
        diag = labels / n_sig
    B = np.zeros((n_sig, 2, 2))
    B[:, 0, 0] = diag[:, 0]
    B[:, 1, 1] = diag[:, 1]
    return B


def write_labels_csv(path: Union[str, Path], labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "eps1", "eps2"])
        for m, (a, b) in enumerate(np.asarray(labels)):
            w.writerow([m, int(a), int(b)])


def read_labels_csv(path: Union[str, Path]) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([[int(r["eps1"]), int(r["eps2"])] for r in rows], dtype=np.int8).reshape(-1, 2)


def hop_seconds(filter_len: int, sample_rate: int) -> float:
    return filter_len / sample_rate


def transition_mask(truth, margin_before: int, margin_after: int) -> np.ndarray:
    """Blocks whose label neighbourhood ``[m - before, m + after]`` is constant."""
    truth = np.asarray(truth)
    n = truth.shape[0]
    keep = np.ones(n, dtype=bool)
    change = np.nonzero(np.any(truth[1:] != truth[:-1], axis=1))[0] + 1
    for c in change:
        keep[max(0, c - margin_after) : min(n, c + margin_before)] = False
    return keep

