"""Shoebox room acoustics and sparse two-talker mixture synthesis.

Impulse responses come from the Allen-Berkley image-source method with a
uniform wall reflection coefficient and 81-tap Hann-windowed sinc
interpolation of fractional delays.

Geometry: the two microphones lie on the x axis of the room, centred on
``array_center``.  Source directions are measured in the horizontal plane
from the array broadside (+y); negative angles put the source on the
microphone-1 side (x smaller than the array centre).
"""

from __future__ import annotations

import configparser
import functools
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import fftconvolve

from .errors import InfeasibleScenarioError
from .signal import MultichannelSignal

__all__ = [
    "RoomScenario",
    "Rir",
    "ActivityPattern",
    "Mixture",
    "rt60_to_reflection",
    "calibrated_reflection",
    "image_source_rir",
    "generate_rir",
    "schroeder_rt60",
    "make_activity_pattern",
    "activity_envelope",
    "synthesize_mixture",
    "load_scenario",
    "save_scenario",
    "parse_scenario_value",
]

SABINE = 0.161
MAX_REFLECTION = 0.999
SINC_TAPS = 81
IMAGE_LEVEL = 0.05  # RMS of each source image after equalization


@dataclass
class RoomScenario:
    """Room, array, sources and mixture settings.

    Lengths in metres, angles in degrees, times in seconds.  ``block_len`` is
    the activity-pattern resolution in samples (the separation hop L).
    """

    room_dims: Tuple[float, float, float] = (6.0, 6.0, 4.0)
    rt60: float = 0.25
    mic_spacing: float = 0.10
    array_center: Tuple[float, float, float] = (3.0, 2.9, 1.5)
    source_doas: Tuple[float, float] = (-70.0, -15.0)
    source_distance: float = 1.5
    speed_of_sound: float = 343.0
    sample_rate: int = 16000
    noise_db: float = -30.0
    occupancy: float = 0.6
    overlap: float = 1.0 / 3.0
    seed: int = 0
    block_len: int = 512
    mean_segment_s: float = 2.0
    ramp_ms: float = 10.0
    duration: float = 20.0
    rir_len: Optional[int] = None
    calibrate_rt60: bool = True

    def __post_init__(self):
        self.room_dims = tuple(float(v) for v in self.room_dims)
        self.array_center = tuple(float(v) for v in self.array_center)
        self.source_doas = tuple(float(v) for v in self.source_doas)
        self.validate()

    def validate(self) -> None:
        if len(self.room_dims) != 3 or min(self.room_dims) <= 0:
            raise InfeasibleScenarioError("room_dims must be three positive lengths")
        if not 0.1 <= self.rt60 <= 1.0:
            raise InfeasibleScenarioError(f"rt60 {self.rt60} s outside [0.1, 1.0]")
        if not 0 < self.occupancy <= 1:
            raise InfeasibleScenarioError("occupancy must lie in (0, 1]")
        if not 0 <= self.overlap <= self.occupancy:
            raise InfeasibleScenarioError("overlap must lie in [0, occupancy]")
        if len(self.source_doas) != 2:
            raise InfeasibleScenarioError("exactly two source directions are required")
        if self.sample_rate <= 0 or self.block_len <= 0 or self.duration <= 0:
            raise InfeasibleScenarioError("sample_rate, block_len and duration must be positive")
        dims = np.asarray(self.room_dims)
        for name, pts in (("microphone", self.mic_positions()), ("source", self.source_positions())):
            if np.any(pts <= 0) or np.any(pts >= dims):
                raise InfeasibleScenarioError(f"{name} outside the room: {pts.round(3).tolist()}")

    def mic_positions(self) -> np.ndarray:
        c = np.asarray(self.array_center)
        half = np.array([self.mic_spacing / 2, 0.0, 0.0])
        return np.stack([c - half, c + half])

    def source_positions(self) -> np.ndarray:
        c = np.asarray(self.array_center)
        th = np.deg2rad(self.source_doas)
        d = self.source_distance
        return np.stack([c + d * np.array([math.sin(t), math.cos(t), 0.0]) for t in th])

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @property
    def default_rir_len(self) -> int:
        return self.rir_len or int(math.ceil(self.rt60 * self.sample_rate))

    def replace(self, **changes) -> "RoomScenario":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return RoomScenario(**values)


@dataclass
class Rir:
    taps: np.ndarray
    source_idx: int
    mic_idx: int


@dataclass
class ActivityPattern:
    """Per-block on/off state of each source, ``labels`` of shape ``(n_blocks, 2)``."""

    labels: np.ndarray
    block_len: int = 512

    @property
    def n_blocks(self) -> int:
        return self.labels.shape[0]

    def occupancy(self) -> np.ndarray:
        return self.labels.mean(axis=0)

    def overlap(self) -> float:
        return float(np.mean(self.labels.all(axis=1)))


@dataclass
class Mixture:
    """Microphone signals plus everything needed to score a separation.

    ``images[u, p]`` is source ``u`` as received at microphone ``p``.
    """

    mic: MultichannelSignal
    images: np.ndarray
    noise: np.ndarray
    pattern: ActivityPattern
    sources: np.ndarray = field(repr=False, default=None)

    def references(self, mic_idx: int = 0) -> np.ndarray:
        """Source images at one microphone, ``(2, n_samples)``."""
        return self.images[:, mic_idx]


def rt60_to_reflection(room_dims: Sequence[float], rt60: float) -> float:
    """Uniform wall reflection coefficient from Sabine's formula.

    ``r = sqrt(1 - a)`` with mean absorption ``a = 0.161 V / (S rt60)``.

    Raises:
        InfeasibleScenarioError: the room cannot be that dry (``a >= 1``).
    """
    if rt60 <= 0:
        raise InfeasibleScenarioError("rt60 must be positive")
    lx, ly, lz = room_dims
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    alpha = SABINE * volume / (surface * rt60)
    if alpha >= 1:
        raise InfeasibleScenarioError(
            f"rt60 {rt60} s is too short for this room (Sabine absorption {alpha:.3f} >= 1)"
        )
    return float(np.clip(math.sqrt(1 - alpha), 0.0, MAX_REFLECTION))


def image_source_rir(
    source: Sequence[float],
    mic: Sequence[float],
    room_dims: Sequence[float],
    reflection: float,
    sample_rate: int = 16000,
    length: int = 4000,
    speed_of_sound: float = 343.0,
    max_order: Optional[int] = None,
) -> np.ndarray:
    """Image-source impulse response of a shoebox room.

    Every image within ``length`` samples of travel (and at most ``max_order``
    reflections, if given) adds ``reflection**n / (4 pi d)`` at delay
    ``d / c * fs`` through a Hann-windowed sinc kernel.
    """
    src = np.asarray(source, dtype=float)
    rcv = np.asarray(mic, dtype=float)
    dims = np.asarray(room_dims, dtype=float)
    fs, c = sample_rate, speed_of_sound
    max_dist = c * (length + SINC_TAPS // 2) / fs

    coords, counts = [], []
    for d in range(3):
        nmax = int(math.ceil(max_dist / (2 * dims[d]))) + 1
        n = np.arange(-nmax, nmax + 1)
        coords.append(np.concatenate([src[d] + 2 * n * dims[d], -src[d] + 2 * n * dims[d]]) - rcv[d])
        counts.append(np.concatenate([2 * np.abs(n), np.abs(n - 1) + np.abs(n)]))

    dx2 = coords[0] ** 2
    h = np.zeros(length + SINC_TAPS)
    half = SINC_TAPS // 2
    offsets = np.arange(-half, half + 1)
    for iy in range(coords[1].size):
        # one slab of images at a time keeps memory bounded
        dyz2 = (coords[1][iy] ** 2 + coords[2] ** 2)[:, None] + dx2[None, :]
        order = (counts[1][iy] + counts[2])[:, None] + counts[0][None, :]
        dist = np.sqrt(dyz2)
        mask = dist <= max_dist
        if max_order is not None:
            mask &= order <= max_order
        if not np.any(mask):
            continue
        dist = dist[mask]
        order = order[mask]
        if reflection == 0:
            keep = order == 0
            dist, order = dist[keep], order[keep]
            if dist.size == 0:
                continue
        amp = np.power(reflection, order) / (4 * np.pi * dist)
        delay = dist / c * fs
        base = np.round(delay).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        t = idx - delay[:, None]
        kernel = np.sinc(t) * 0.5 * (1 + np.cos(2 * np.pi * t / SINC_TAPS))
        ok = (idx >= 0) & (idx < h.size)
        h += np.bincount(idx[ok], weights=(amp[:, None] * kernel)[ok], minlength=h.size)
    return h[:length]


def schroeder_rt60(rir: np.ndarray, sample_rate: int, fit_db: Tuple[float, float] = (-5.0, -25.0)) -> float:
    """Reverberation time from the backward-integrated energy decay.

    A line is fitted to the decay curve between the two ``fit_db`` levels and
    extrapolated to 60 dB.
    """
    energy = np.cumsum(np.asarray(rir, dtype=float)[::-1] ** 2)[::-1]
    if energy[0] <= 0:
        raise ValueError("impulse response has no energy")
    edc = 10 * np.log10(np.maximum(energy / energy[0], 1e-300))
    hi, lo = fit_db
    idx = np.nonzero((edc <= hi) & (edc >= lo))[0]
    if idx.size < 2:
        raise ValueError("decay curve does not span the fit range")
    slope = np.polyfit(idx / sample_rate, edc[idx], 1)[0]
    if slope >= 0:
        raise ValueError("decay curve is not decreasing")
    return float(-60.0 / slope)


@functools.lru_cache(maxsize=64)
def _calibrated(geometry: tuple, rt60: float, fs: int, c: float, length: int) -> float:
    dims, pairs = geometry
    r = rt60_to_reflection(dims, rt60)
    log_r = math.log(r)
    for _ in range(8):
        r = min(math.exp(log_r), MAX_REFLECTION)
        edc = sum(
            image_source_rir(s, m, dims, r, fs, length, c) ** 2 for s, m in pairs
        )
        measured = schroeder_rt60(np.sqrt(edc), fs)
        if abs(measured / rt60 - 1) < 0.02:
            break
        # decay rate is close to proportional to -log(r)
        log_r *= measured / rt60
    return r


def calibrated_reflection(scenario: RoomScenario) -> float:
    """Reflection coefficient whose simulated decay matches ``scenario.rt60``.

    Starts from :func:`rt60_to_reflection` and rescales ``log r`` by the ratio
    of measured to target Schroeder decay time, averaged over all four
    source/microphone pairs, until they agree within 2 %.
    """
    pairs = tuple(
        (tuple(s), tuple(m)) for s in scenario.source_positions() for m in scenario.mic_positions()
    )
    return _calibrated(
        (tuple(scenario.room_dims), pairs),
        float(scenario.rt60),
        int(scenario.sample_rate),
        float(scenario.speed_of_sound),
        max(scenario.default_rir_len, int(math.ceil(scenario.rt60 * scenario.sample_rate))),
    )


def generate_rir(
    scenario: RoomScenario,
    source_idx: int,
    mic_idx: int,
    reflection: Optional[float] = None,
) -> Rir:
    """Impulse response from source ``source_idx`` to microphone ``mic_idx``.

    The reflection coefficient defaults to :func:`calibrated_reflection`
    (or plain Sabine when ``scenario.calibrate_rt60`` is false).
    """
    if reflection is None:
        if scenario.calibrate_rt60:
            reflection = calibrated_reflection(scenario)
        else:
            reflection = rt60_to_reflection(scenario.room_dims, scenario.rt60)
    src = scenario.source_positions()[source_idx]
    mic = scenario.mic_positions()[mic_idx]
    taps = image_source_rir(
        src, mic, scenario.room_dims, reflection, scenario.sample_rate,
        scenario.default_rir_len, scenario.speed_of_sound,
    )
    return Rir(taps, source_idx, mic_idx)


def _split(total: int, pieces: int, rng: np.random.Generator) -> list:
    if total == 0:
        return []
    pieces = max(1, min(pieces, total))
    cuts = np.sort(rng.choice(np.arange(1, total), size=pieces - 1, replace=False)) if pieces > 1 else []
    edges = np.concatenate([[0], cuts, [total]]).astype(int)
    return list(np.diff(edges))


def make_activity_pattern(
    num_blocks: int,
    occupancy: float = 0.6,
    overlap: float = 1.0 / 3.0,
    seed: int = 0,
    mean_segment_blocks: float = 62.5,
    block_len: int = 512,
) -> ActivityPattern:
    """Random on/off pattern with contiguous segments and exact target fractions.

    Block counts for the four states (silent, only source 1, only source 2,
    both) are fixed from the targets first, each state's total is split into
    segments of roughly ``mean_segment_blocks``, and the segments are then
    interleaved at random without two neighbours sharing a state.
    """
    if not 0 < occupancy <= 1:
        raise InfeasibleScenarioError("occupancy must lie in (0, 1]")
    if not 0 <= overlap <= occupancy:
        raise InfeasibleScenarioError("overlap cannot exceed occupancy")
    if 2 * occupancy - overlap > 1 + 1e-12:
        raise InfeasibleScenarioError("occupancy/overlap leave a negative silent fraction")
    rng = np.random.default_rng(seed)
    n_both = int(round(overlap * num_blocks))
    n_single = max(int(round(occupancy * num_blocks)) - n_both, 0)
    n_none = num_blocks - n_both - 2 * n_single
    if n_none < 0:
        n_single -= (-n_none + 1) // 2
        n_none = num_blocks - n_both - 2 * n_single
    states = {(0, 0): n_none, (1, 0): n_single, (0, 1): n_single, (1, 1): n_both}
    segments = {
        s: _split(n, int(round(n / mean_segment_blocks)) or 1, rng) for s, n in states.items()
    }
    for s in segments:
        rng.shuffle(segments[s])

    order = []
    prev = None
    while any(segments.values()):
        choices = [s for s, segs in segments.items() if segs and s != prev]
        if not choices:
            # only the previous state has material left: extend the last run
            s = prev
        else:
            weights = np.array([sum(segments[s]) for s in choices], dtype=float)
            s = choices[rng.choice(len(choices), p=weights / weights.sum())]
        order.append((s, segments[s].pop()))
        prev = s

    labels = np.zeros((num_blocks, 2), dtype=np.int8)
    pos = 0
    for s, n in order:
        labels[pos : pos + n] = s
        pos += n
    return ActivityPattern(labels, block_len)


def activity_envelope(
    pattern: ActivityPattern, n_samples: int, sample_rate: int, ramp_ms: float = 10.0
) -> np.ndarray:
    """Per-sample gains ``(2, n_samples)`` with raised-cosine transitions."""
    gate = np.repeat(pattern.labels.T.astype(float), pattern.block_len, axis=1)
    if gate.shape[1] < n_samples:
        gate = np.pad(gate, ((0, 0), (0, n_samples - gate.shape[1])), mode="edge")
    gate = gate[:, :n_samples]
    ramp = int(round(ramp_ms * 1e-3 * sample_rate))
    if ramp > 1:
        win = np.hanning(ramp + 2)[1:-1]
        win /= win.sum()
        padded = np.pad(gate, ((0, 0), (ramp, ramp)), mode="edge")
        gate = np.stack([np.convolve(g, win, mode="same") for g in padded])[:, ramp:-ramp]
    return np.clip(gate, 0.0, 1.0)


def synthesize_mixture(
    scenario: RoomScenario,
    source_signals,
    pattern: Optional[ActivityPattern] = None,
) -> Mixture:
    """Gate, reverberate, equalize and mix two dry sources.

    Each source is gated by its activity envelope and convolved with its two
    impulse responses.  Both images are then scaled to the same power
    (RMS 0.05 over both microphones), which makes the input SIR 0 dB, and
    white Gaussian noise is added at ``noise_db`` relative to the total
    speech power.

    Raises:
        ValueError: the two sources differ in length.
        InfeasibleScenarioError: a source image has zero power.
    """
    s = source_signals.samples if isinstance(source_signals, MultichannelSignal) else np.asarray(source_signals, dtype=float)
    if s.ndim != 2 or s.shape[0] != 2:
        raise ValueError("need two source signals of equal length")
    n = s.shape[1]
    fs = scenario.sample_rate
    if pattern is None:
        n_blocks = math.ceil(n / scenario.block_len)
        mean_blocks = scenario.mean_segment_s * fs / scenario.block_len
        pattern = make_activity_pattern(
            n_blocks, scenario.occupancy, scenario.overlap, scenario.seed, mean_blocks, scenario.block_len
        )
    gated = s * activity_envelope(pattern, n, fs, scenario.ramp_ms)

    images = np.empty((2, 2, n))
    for u in range(2):
        for p in range(2):
            h = generate_rir(scenario, u, p).taps
            images[u, p] = fftconvolve(gated[u], h)[:n]
        power = float(np.mean(images[u] ** 2))
        if power <= 0:
            raise InfeasibleScenarioError(f"source {u + 1} is silent; cannot equalize power")
        images[u] *= IMAGE_LEVEL / math.sqrt(power)

    speech = images.sum(axis=0)
    rng = np.random.default_rng([scenario.seed, 1])
    noise = rng.standard_normal((2, n))
    if np.isfinite(scenario.noise_db):
        target = float(np.mean(speech**2)) * 10 ** (scenario.noise_db / 10)
        noise *= math.sqrt(target / float(np.mean(noise**2)))
    else:
        noise[:] = 0.0
    mic = MultichannelSignal(speech + noise, fs)
    return Mixture(mic, images, noise, pattern, gated)


# -- scenario files -----------------------------------------------------------
# INI text with one [scenario] section; keys mirror RoomScenario fields,
# tuples as comma-separated numbers.

_TUPLE_FIELDS = {"room_dims", "array_center", "source_doas"}


def parse_scenario_value(name: str, raw: str, default):
    raw = raw.strip()
    if name in _TUPLE_FIELDS:
        return tuple(float(v) for v in raw.split(","))
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if name == "rir_len":
        return None if raw.lower() in ("", "none") else int(raw)
    if isinstance(default, int):
        return int(raw)
    if raw.lower() in ("-inf", "-infinity"):
        return -math.inf
    return float(raw)


def load_scenario(path: Union[str, Path], **overrides) -> RoomScenario:
    """Read a scenario file; keyword overrides win over the file."""
    parser = configparser.ConfigParser()
    if not parser.read(str(path)):
        raise FileNotFoundError(path)
    if "scenario" not in parser:
        raise InfeasibleScenarioError(f"{path}: missing [scenario] section")
    defaults = RoomScenario()
    known = {f.name for f in fields(RoomScenario)}
    values = {}
    for key, raw in parser["scenario"].items():
        if key not in known:
            raise InfeasibleScenarioError(f"{path}: unknown scenario key {key!r}")
        values[key] = parse_scenario_value(key, raw, getattr(defaults, key))
    values.update(overrides)
    return RoomScenario(**values)


def save_scenario(scenario: RoomScenario, path: Union[str, Path]) -> None:
    lines = ["[scenario]"]
    for f in fields(RoomScenario):
        v = getattr(scenario, f.name)
        if isinstance(v, tuple):
            v = ", ".join(repr(float(x)) for x in v)
        elif v is None:
            v = "none"
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")
