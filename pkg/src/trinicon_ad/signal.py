"""Audio containers, WAV I/O, block framing and the 4L-point transform pair.

Frames follow the block layout of the frequency-domain algorithm: block ``m``
of a signal with filter length ``L`` holds samples ``mL - 3L ... mL + L - 1``
(``4L`` samples, hop ``L``).  Indices outside the signal read as zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.io import wavfile

from .errors import SignalFormatError

__all__ = [
    "MultichannelSignal",
    "FrameParams",
    "load_wav",
    "write_wav",
    "frame_blocks",
    "dft_block",
    "idft_block",
]

PCM16_SCALE = 32768.0


@dataclass(frozen=True)
class MultichannelSignal:
    """Channel-major real audio.

    Attributes:
        samples: array of shape ``(n_channels, n_samples)``.
        sample_rate: sampling frequency in Hz.
    """

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[np.newaxis, :]
        if x.ndim != 2:
            raise SignalFormatError(f"samples must be 1-D or 2-D, got shape {x.shape}")
        if self.sample_rate <= 0:
            raise SignalFormatError("sample_rate must be positive")
        object.__setattr__(self, "samples", x)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def __len__(self) -> int:
        return self.n_samples

    def channel(self, idx: int) -> np.ndarray:
        return self.samples[idx]


@dataclass(frozen=True)
class FrameParams:
    """Block geometry for filter length ``L``: 4L-sample frames with hop L."""

    filter_len: int
    num_blocks: int

    def __post_init__(self):
        if self.filter_len < 1:
            raise ValueError("filter_len must be >= 1")
        if self.num_blocks < 0:
            raise ValueError("num_blocks must be >= 0")

    @property
    def block_len(self) -> int:
        return 4 * self.filter_len

    @property
    def hop(self) -> int:
        return self.filter_len

    @classmethod
    def for_length(cls, n_samples: int, filter_len: int) -> "FrameParams":
        return cls(filter_len, math.ceil(n_samples / filter_len))


def load_wav(
    path: Union[str, Path],
    channels: Optional[int] = None,
    sample_rate: Optional[int] = None,
) -> MultichannelSignal:
    """Read a PCM16 or float32 RIFF file into a :class:`MultichannelSignal`.

    PCM16 values are divided by 32768, so full scale maps into ``[-1, 1)``.

    Args:
        path: file to read.
        channels: required channel count, if the caller needs one.
        sample_rate: required sampling rate, if the caller needs one.

    Raises:
        SignalFormatError: unreadable file, unsupported encoding or a
            channel-count / sample-rate mismatch.
    """
    try:
        fs, data = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise SignalFormatError(f"cannot read {path}: {exc}") from exc

    if data.dtype == np.int16:
        x = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise SignalFormatError(f"{path}: unsupported sample format {data.dtype}")

    x = x.T if x.ndim == 2 else x[np.newaxis, :]
    if x.shape[0] not in (1, 2):
        raise SignalFormatError(f"{path}: {x.shape[0]} channels, expected 1 or 2")
    if channels is not None and x.shape[0] != channels:
        raise SignalFormatError(f"{path}: has {x.shape[0]} channel(s), need {channels}")
    if sample_rate is not None and fs != sample_rate:
        raise SignalFormatError(f"{path}: sample rate {fs} Hz, expected {sample_rate} Hz")
    return MultichannelSignal(np.ascontiguousarray(x), int(fs))


def write_wav(
    path: Union[str, Path], signal: MultichannelSignal, fmt: str = "pcm16"
) -> None:
    """Write ``signal`` as little-endian PCM16 (``fmt="pcm16"``) or float32."""
    x = signal.samples
    if fmt == "pcm16":
        data = np.clip(np.round(x * PCM16_SCALE), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(str(path), signal.sample_rate, np.ascontiguousarray(data.T))


def frame_blocks(signal, params: FrameParams) -> np.ndarray:
    """Cut a signal into overlapping 4L frames.

    Args:
        signal: :class:`MultichannelSignal` or array ``(n_channels, n_samples)``.
        params: frame geometry.

    Returns:
        Array ``(num_blocks, n_channels, 4L)``; frame ``m`` holds samples
        ``mL - 3L ... mL + L - 1`` with zeros outside the signal.
    """
    x = signal.samples if isinstance(signal, MultichannelSignal) else np.atleast_2d(signal)
    L, M = params.filter_len, params.num_blocks
    n_ch, n = x.shape
    total = (M + 3) * L
    padded = np.zeros((n_ch, total), dtype=x.dtype)
    keep = min(n, total - 3 * L)
    padded[:, 3 * L : 3 * L + keep] = x[:, :keep]
    if M == 0:
        return np.zeros((0, n_ch, 4 * L), dtype=x.dtype)
    view = np.lib.stride_tricks.sliding_window_view(padded, 4 * L, axis=1)[:, ::L]
    return np.ascontiguousarray(view[:, :M].transpose(1, 0, 2))


def dft_block(frame: np.ndarray, block_len: Optional[int] = None) -> np.ndarray:
    """Unnormalized DFT along the last axis.

    ``block_len`` (when given) is checked against the frame length.
    """
    frame = np.asarray(frame)
    if block_len is not None and frame.shape[-1] != block_len:
        raise ValueError(f"frame length {frame.shape[-1]} != block length {block_len}")
    if frame.shape[-1] % 4:
        raise ValueError("frame length must be 4L")
    return np.fft.fft(frame, axis=-1)


def idft_block(bins: np.ndarray, real: bool = True) -> np.ndarray:
    """Inverse of :func:`dft_block` (``1/(4L)`` scaling)."""
    bins = np.asarray(bins)
    if bins.shape[-1] % 4:
        raise ValueError("spectrum length must be 4L")
    out = np.fft.ifft(bins, axis=-1)
    return out.real if real else out
