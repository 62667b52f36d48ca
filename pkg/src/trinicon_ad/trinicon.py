"""Offline frequency-domain TRINICON with second-order statistics.

Conventions used throughout:

* ``taps[p, q]`` is the FIR filter from input (microphone) ``p`` to output
  ``q``, so per frequency bin ``y = x @ W`` with row vectors ``x``, ``y``.
* PSD matrices are ``Phi = Y^H Y``, i.e. ``Phi[q, r] = sum conj(Y_q) Y_r``.
* Blocks use 4L-point transforms with hop L.  Output blocks used for the
  statistics keep only the last 2L samples of each frame, which removes every
  circularly wrapped sample before the PSD is formed.
* The natural-gradient step for bin ``k`` is
  ``2 W (Phi - diag Phi) diag(Phi)^-1 B`` with ``B`` a diagonal per-block,
  per-output weight.  After each step every filter is truncated to L taps.

Each block carries its own PSD estimate (a moving average over
``psd_frames`` neighbouring frames), so the normalization by the output
powers follows the non-stationarity of the signals.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .errors import DivergenceError, NumericalCorruptionError
from .signal import FrameParams, MultichannelSignal, frame_blocks

logger = logging.getLogger(__name__)

__all__ = [
    "DemixingFilter",
    "PsdMatrix",
    "TriniconConfig",
    "TriniconResult",
    "init_filters",
    "forward_filter",
    "estimate_psd",
    "natural_gradient_bin",
    "constrain_filter",
    "cost",
    "run_offline",
    "minimal_distortion",
    "save_filter",
    "load_filter",
]

FILTER_MAGIC = b"TRNF"
FILTER_VERSION = 1
IMAG_TOL = 1e-6


@dataclass
class DemixingFilter:
    """2x2 MIMO FIR demixing system.

    Attributes:
        taps: real array ``(2, 2, L)``; ``taps[p, q]`` maps input p to output q.
        shift: delay of the unit impulse used at initialization.
    """

    taps: np.ndarray
    shift: int = 0

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 3 or taps.shape[:2] != (2, 2):
            raise ValueError(f"taps must have shape (2, 2, L), got {taps.shape}")
        if not np.all(np.isfinite(taps)):
            raise NumericalCorruptionError("non-finite filter taps")
        self.taps = taps

    @property
    def filter_len(self) -> int:
        return self.taps.shape[-1]

    def spectrum(self, n_fft: Optional[int] = None) -> np.ndarray:
        """Full ``n_fft``-point (default 4L) frequency response, ``(2, 2, n_fft)``."""
        n_fft = n_fft or 4 * self.filter_len
        return np.fft.fft(self.taps, n=n_fft, axis=-1)

    def copy(self) -> "DemixingFilter":
        return DemixingFilter(self.taps.copy(), self.shift)


@dataclass
class PsdMatrix:
    """Per-bin 2x2 cross-power matrices.

    Attributes:
        matrices: complex array ``(n_bins, 2, 2)``, ``Phi = Y^H Y`` per bin.
        weight_sum: total accumulation weight.
    """

    matrices: np.ndarray
    weight_sum: float

    @property
    def n_bins(self) -> int:
        return self.matrices.shape[0]


@dataclass
class TriniconConfig:
    """Settings for :func:`run_offline`.

    Attributes:
        filter_len: demixing filter length L in taps.
        iterations: maximum number of natural-gradient iterations.
        step_size: step size mu.
        init_shift: delay of the diagonal unit impulses at initialization.
        psd_frames: frames averaged into each block's PSD estimate.
        block_weights: offline block weights beta, uniform ``1/N_sig`` if None.
            Normalized to sum to one.
        tol: relative cost change that counts as converged.
        patience: consecutive iterations below ``tol`` before stopping early.
        early_stop: enable the ``tol``/``patience`` rule.
        floor: PSD diagonal floor, relative to the largest bin power.
    """

    filter_len: int = 512
    iterations: int = 50
    step_size: float = 0.1
    init_shift: int = 10
    psd_frames: int = 8
    block_weights: Optional[np.ndarray] = None
    tol: float = 1e-5
    patience: int = 5
    early_stop: bool = True
    floor: float = 1e-12

    def __post_init__(self):
        if self.filter_len < 1:
            raise ValueError("filter_len must be >= 1")
        if self.step_size < 0:
            raise ValueError("step_size must be >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.psd_frames < 1:
            raise ValueError("psd_frames must be >= 1")
        if not 0 <= self.init_shift < self.filter_len:
            raise ValueError("init_shift must satisfy 0 <= shift < filter_len")

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "filter_len", "iterations", "step_size", "init_shift", "psd_frames",
            "tol", "patience", "early_stop", "floor",
        )}
        out["block_weights"] = "uniform" if self.block_weights is None else "custom"
        return out


@dataclass
class TriniconResult:
    filter: DemixingFilter
    outputs: MultichannelSignal
    cost_trace: List[float] = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False


def init_filters(filter_len: int, shift: int) -> DemixingFilter:
    """Diagonal filters set to a unit impulse delayed by ``shift``; cross filters zero."""
    if not 0 <= shift < filter_len:
        raise ValueError(f"shift {shift} outside [0, {filter_len})")
    taps = np.zeros((2, 2, filter_len))
    taps[0, 0, shift] = 1.0
    taps[1, 1, shift] = 1.0
    return DemixingFilter(taps, shift)


def _input_spectra(x: np.ndarray, L: int) -> np.ndarray:
    params = FrameParams.for_length(x.shape[1], L)
    return np.fft.rfft(frame_blocks(x, params), axis=-1)


def _apply(Xf: np.ndarray, Wf: np.ndarray) -> np.ndarray:
    # Xf: (M, 2, K) input spectra, Wf: (2, 2, K) -> (M, 2, K)
    return np.einsum("mpk,pqk->mqk", Xf, Wf)


def forward_filter(W: DemixingFilter, mic: MultichannelSignal) -> MultichannelSignal:
    """Linear convolution ``y_q = sum_p w_pq * x_p`` by overlap-save on 4L blocks.

    The last L samples of every circularly filtered frame are free of wrap
    artifacts because the filters have at most L taps.
    """
    L = W.filter_len
    x = mic.samples
    n = x.shape[1]
    Xf = _input_spectra(x, L)
    frames = np.fft.irfft(_apply(Xf, np.fft.rfft(W.taps, n=4 * L, axis=-1)), n=4 * L, axis=-1)
    y = frames[:, :, 3 * L :].transpose(1, 0, 2).reshape(2, -1)[:, :n]
    return MultichannelSignal(y, mic.sample_rate)


def estimate_psd(Y: np.ndarray, weights=None) -> PsdMatrix:
    """Weighted sum of per-block outer products ``Phi = sum_i w_i y_i^H y_i``.

    Args:
        Y: complex spectra ``(n_blocks, 2, n_bins)`` of time-constrained
            output frames.
        weights: non-negative per-block weights (uniform ``1/n_blocks`` if None).
    """
    Y = np.asarray(Y)
    if Y.ndim != 3 or Y.shape[0] == 0:
        raise ValueError("need a non-empty block sequence of shape (n_blocks, 2, n_bins)")
    n_blocks = Y.shape[0]
    if weights is None:
        weights = np.full(n_blocks, 1.0 / n_blocks)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n_blocks,) or np.any(weights < 0):
        raise ValueError("weights must be non-negative, one per block")
    phi = np.einsum("i,iqk,irk->kqr", weights, Y.conj(), Y)
    return PsdMatrix(phi, float(weights.sum()))


def natural_gradient_bin(W, phi, B=None) -> np.ndarray:
    """``2 W (Phi - diag Phi) diag(Phi)^-1 B`` for stacks of 2x2 matrices.

    Args:
        W: demixing matrices ``(..., 2, 2)``.
        phi: output PSD matrices ``(..., 2, 2)`` with positive diagonal.
        B: diagonal weights, either ``(..., 2, 2)`` or the diagonal ``(..., 2)``.
            Identity if None.
    """
    W = np.asarray(W)
    phi = np.asarray(phi)
    if not np.all(np.isfinite(phi)):
        raise NumericalCorruptionError("non-finite PSD entries")
    d = np.real(np.diagonal(phi, axis1=-2, axis2=-1))
    if np.any(d <= 0):
        raise ValueError("PSD diagonal must be strictly positive")
    off = phi.copy()
    off[..., 0, 0] = 0
    off[..., 1, 1] = 0
    scale = 1.0 / d
    if B is not None:
        B = np.asarray(B)
        scale = scale * (np.diagonal(B, axis1=-2, axis2=-1).real if B.ndim == phi.ndim else B)
    return 2.0 * W @ (off * scale[..., np.newaxis, :])


def constrain_filter(spectrum: np.ndarray, filter_len: int, shift: int = 0) -> DemixingFilter:
    """Back to the time domain, keeping taps ``0 .. L-1`` and dropping the rest.

    Args:
        spectrum: ``(2, 2, 4L)`` full-band frequency responses.
        filter_len: L.
        shift: carried into the returned filter's metadata.

    Raises:
        NumericalCorruptionError: the inverse transform has an imaginary part
            above 1e-6 (relative to the tap scale), i.e. the spectrum is not
            that of a real filter.
    """
    spectrum = np.asarray(spectrum)
    if spectrum.shape[:2] != (2, 2) or spectrum.shape[-1] != 4 * filter_len:
        raise ValueError(f"expected shape (2, 2, {4 * filter_len}), got {spectrum.shape}")
    taps = np.fft.ifft(spectrum, axis=-1)
    scale = max(1.0, float(np.max(np.abs(taps.real))))
    if np.max(np.abs(taps.imag)) > IMAG_TOL * scale:
        raise NumericalCorruptionError("filter spectrum is not Hermitian-symmetric")
    return DemixingFilter(taps.real[..., :filter_len].copy(), shift)


def cost(phi, weights=None) -> float:
    """Second-order-statistics cost ``sum_i w_i sum_k log(Phi11 Phi22 / det Phi)``.

    Args:
        phi: PSD matrices, ``(n_bins, 2, 2)`` or ``(n_blocks, n_bins, 2, 2)``,
            or a :class:`PsdMatrix`.
        weights: per-block weights (uniform ``1/n_blocks`` if None).

    Returns:
        J >= 0, zero exactly when every matrix is diagonal.
    """
    if isinstance(phi, PsdMatrix):
        phi = phi.matrices
    phi = np.asarray(phi)
    if phi.ndim == 3:
        phi = phi[np.newaxis]
    d0 = np.real(phi[..., 0, 0])
    d1 = np.real(phi[..., 1, 1])
    c2 = np.abs(phi[..., 0, 1]) ** 2
    det = d0 * d1 - c2
    if np.any(d0 <= 0) or np.any(d1 <= 0) or np.any(det <= 0):
        raise NumericalCorruptionError("PSD matrix is not positive definite")
    if weights is None:
        weights = np.full(phi.shape[0], 1.0 / phi.shape[0])
    per_block = -np.log1p(-c2 / (d0 * d1)).sum(axis=-1)
    return float(np.dot(weights, per_block))


# -- offline loop ---------------------------------------------------------


def _constrained_output_spectra(Xf, Wf, L):
    """Spectra of the last 2L output samples of each frame (wrap-free region)."""
    frames = np.fft.irfft(_apply(Xf, Wf), n=4 * L, axis=-1)
    frames[..., : 2 * L] = 0.0
    return np.fft.rfft(frames, axis=-1)


def _moving_average(a: np.ndarray, width: int) -> np.ndarray:
    """Centered moving average along axis 0, shrinking the window at the edges."""
    if width <= 1:
        return a
    n = a.shape[0]
    csum = np.concatenate([np.zeros((1,) + a.shape[1:], dtype=a.dtype), np.cumsum(a, axis=0)])
    half_lo = (width - 1) // 2
    half_hi = width - 1 - half_lo
    idx = np.arange(n)
    lo = np.clip(idx - half_lo, 0, n)
    hi = np.clip(idx + half_hi + 1, 0, n)
    count = (hi - lo).reshape((n,) + (1,) * (a.ndim - 1))
    return (csum[hi] - csum[lo]) / count


def _local_psd(Yc, width):
    """Per-block PSD entries (Phi11, Phi22, Phi12) averaged over ``width`` frames."""
    p11 = _moving_average(np.abs(Yc[:, 0]) ** 2, width)
    p22 = _moving_average(np.abs(Yc[:, 1]) ** 2, width)
    p12 = _moving_average(Yc[:, 0].conj() * Yc[:, 1], width)
    return p11, p22, p12


def _bin_multiplicity(L):
    # rfft bins 1..2L-1 stand for two bins of the full 4L-point spectrum
    m = np.full(2 * L + 1, 2.0)
    m[0] = m[-1] = 1.0
    return m


def _floored(p11, p22, p12, floor):
    ref = max(float(p11.max(initial=0.0)), float(p22.max(initial=0.0)))
    eps = max(floor * ref, np.finfo(float).tiny)
    return np.maximum(p11, eps), np.maximum(p22, eps), p12, eps


def _sos_cost(p11, p22, p12, block_w, mult, eps):
    rho = np.abs(p12) ** 2 / (p11 * p22)
    rho = np.minimum(rho, 1.0 - 1e-12)
    per_block = -(np.log1p(-rho) * mult).sum(axis=-1)
    return float(np.dot(block_w, per_block))


def run_offline(
    mic: MultichannelSignal,
    cfg: Optional[TriniconConfig] = None,
    source_weights: Optional[np.ndarray] = None,
    init: Optional[DemixingFilter] = None,
) -> TriniconResult:
    """Offline natural-gradient adaptation of a 2x2 demixing system.

    Args:
        mic: two-channel mixture.
        cfg: algorithm settings.
        source_weights: optional ``(N_sig, 2)`` diagonals of the per-block
            output weights B(m).  When given they replace the block weights
            beta and scale the gradient columns block by block.
        init: starting filter (defaults to the shifted unit impulse).

    Returns:
        :class:`TriniconResult` with the final filter, the filtered outputs
        and the cost after each iteration (entry 0 is the initial cost).

    Raises:
        DivergenceError: cost or filter taps became non-finite.
    """
    cfg = cfg or TriniconConfig()
    if mic.channels != 2:
        raise ValueError("run_offline needs a two-channel input")
    L = cfg.filter_len
    params = FrameParams.for_length(mic.n_samples, L)
    M = params.num_blocks
    if M < 4:
        raise ValueError(f"signal too short: {M} blocks, need at least 4")

    if source_weights is not None:
        col_w = np.asarray(source_weights, dtype=np.float64)
        if col_w.shape != (M, 2):
            raise ValueError(f"source_weights must have shape ({M}, 2)")
        block_w = col_w.mean(axis=1)
    else:
        if cfg.block_weights is None:
            block_w = np.full(M, 1.0 / M)
        else:
            block_w = np.asarray(cfg.block_weights, dtype=np.float64)
            if block_w.shape != (M,) or np.any(block_w < 0) or block_w.sum() <= 0:
                raise ValueError(f"block_weights must be {M} non-negative values")
            block_w = block_w / block_w.sum()
        col_w = np.repeat(block_w[:, np.newaxis], 2, axis=1)

    W = (init.copy() if init is not None else init_filters(L, cfg.init_shift))
    if W.filter_len != L:
        raise ValueError("initial filter length does not match cfg.filter_len")
    shift = W.shift
    taps = W.taps
    Wf = np.fft.rfft(taps, n=4 * L, axis=-1)
    Xf = _input_spectra(mic.samples, L)
    mult = _bin_multiplicity(L)

    trace: List[float] = []
    converged = False
    it = 0
    while True:
        Yc = _constrained_output_spectra(Xf, Wf, L)
        p11, p22, p12 = _local_psd(Yc, cfg.psd_frames)
        p11, p22, p12, eps = _floored(p11, p22, p12, cfg.floor)
        J = _sos_cost(p11, p22, p12, block_w, mult, eps)
        trace.append(J)
        if not np.isfinite(J):
            raise DivergenceError(f"cost became non-finite at iteration {it}", trace)
        if _should_stop(trace, cfg) or it >= cfg.iterations:
            converged = it < cfg.iterations
            break
        if cfg.step_size == 0:
            it = cfg.iterations
            continue

        # column q of (Phi - diag Phi) diag^-1 B summed over blocks
        s12 = np.einsum("m,mk->k", col_w[:, 1], p12 / p22)
        s21 = np.einsum("m,mk->k", col_w[:, 0], p12.conj() / p11)
        grad = np.empty_like(Wf)
        grad[:, 0] = 2.0 * Wf[:, 1] * s21
        grad[:, 1] = 2.0 * Wf[:, 0] * s12
        Wf = Wf - cfg.step_size * grad

        taps = np.fft.irfft(Wf, n=4 * L, axis=-1)
        taps[..., L:] = 0.0
        if not np.all(np.isfinite(taps)):
            raise DivergenceError(f"filter taps became non-finite at iteration {it}", trace)
        Wf = np.fft.rfft(taps, axis=-1)
        it += 1

    final = DemixingFilter(taps[..., :L], shift)
    outputs = forward_filter(final, mic)
    logger.debug("run_offline: %d iterations, cost %.4g -> %.4g", it, trace[0], trace[-1])
    return TriniconResult(final, outputs, trace, it, converged)


def _should_stop(trace, cfg) -> bool:
    if not cfg.early_stop or len(trace) <= cfg.patience:
        return False
    recent = np.asarray(trace[-(cfg.patience + 1):])
    rel = np.abs(np.diff(recent)) / np.maximum(np.abs(recent[:-1]), 1e-300)
    return bool(np.all(rel < cfg.tol))


def minimal_distortion(W: DemixingFilter, mic: MultichannelSignal, n_fft: Optional[int] = None) -> MultichannelSignal:
    """Rescale each output to its image at the microphone where it is strongest.

    Per frequency bin the mixture is ``x = y W^-1``, so the contribution of
    output ``q`` to microphone ``p`` is ``y_q (W^-1)[q, p]``.  Output ``q`` is
    replaced by that contribution for the microphone ``p`` carrying most of
    its energy.  The rescaling filters are non-causal and realized with a
    half-length delay that is removed afterwards.
    """
    L = W.filter_len
    n_fft = n_fft or 4 * L
    Wf = np.fft.rfft(W.taps, n=n_fft, axis=-1).transpose(2, 0, 1)  # (K, 2, 2)
    cond = np.linalg.cond(Wf)
    Wf = Wf + np.where(cond > 1e8, 1e-8, 0.0)[:, None, None] * np.eye(2)
    A = np.linalg.inv(Wf)  # rows: outputs, columns: mics

    y = forward_filter(W, mic).samples
    n = y.shape[1]
    out = np.empty_like(y)
    delay = n_fft // 2
    for q in range(2):
        best = None
        for p in range(2):
            h = np.roll(np.fft.irfft(A[:, q, p], n=n_fft), delay)
            img = _fftconv(y[q], h)[delay : delay + n]
            energy = float(np.dot(img, img))
            if best is None or energy > best[0]:
                best = (energy, img)
        out[q] = best[1]
    return MultichannelSignal(out, mic.sample_rate)


def _fftconv(a, b):
    from scipy.signal import fftconvolve

    return fftconvolve(a, b)


# -- filter file format ----------------------------------------------------
# header: magic "TRNF", u32 version, u32 L, u32 shift; then 2*2*L float64 taps
# in (p, q, l) order.  Everything little-endian.


def save_filter(path: Union[str, Path], W: DemixingFilter) -> None:
    header = FILTER_MAGIC + struct.pack("<III", FILTER_VERSION, W.filter_len, W.shift)
    Path(path).write_bytes(header + W.taps.astype("<f8").tobytes())


def load_filter(path: Union[str, Path]) -> DemixingFilter:
    raw = Path(path).read_bytes()
    if raw[:4] != FILTER_MAGIC or len(raw) < 16:
        raise ValueError(f"{path}: not a demixing filter file")
    version, L, shift = struct.unpack("<III", raw[4:16])
    if version != FILTER_VERSION:
        raise ValueError(f"{path}: unsupported filter file version {version}")
    body = raw[16:]
    if len(body) != 2 * 2 * L * 8:
        raise ValueError(f"{path}: truncated filter file")
    taps = np.frombuffer(body, dtype="<f8").reshape(2, 2, L).astype(np.float64)
    return DemixingFilter(taps, shift)
