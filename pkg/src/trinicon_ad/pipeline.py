"""Two-pass separation: plain TRINICON, activity detection, regularized rerun.

Output ``p`` of the first pass is assumed to suppress source ``p``; labels
therefore refer to sources by the output that cancels them, and the second
pass scales the gradient column of output ``p`` by ``eps_p(m)``.  Output
``p`` of the final result contains the *other* source.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .activity import (
    DetectorConfig,
    block_powers,
    build_weight_matrices,
    classify_blocks,
    estimate_noise_floor,
)
from .signal import FrameParams, MultichannelSignal, frame_blocks
from .trinicon import TriniconConfig, TriniconResult, minimal_distortion, run_offline

logger = logging.getLogger(__name__)

__all__ = ["TwoPassResult", "detect_activity", "separate_two_pass"]

# first frames contain leading zero padding and would drag the noise floor down
EDGE_BLOCKS = 3


@dataclass
class TwoPassResult:
    outputs: MultichannelSignal
    labels: np.ndarray
    filter: object
    pass1: TriniconResult
    pass2: Optional[TriniconResult]
    diagnostics: dict = field(default_factory=dict)


def _block_spectra(x: np.ndarray, L: int) -> np.ndarray:
    return np.fft.rfft(frame_blocks(x, FrameParams.for_length(x.shape[1], L)), axis=-1)


def detect_activity(
    mic: MultichannelSignal,
    outputs: MultichannelSignal,
    filter_len: int,
    cfg: Optional[DetectorConfig] = None,
):
    """Labels from input and first-pass output block spectra.

    Returns:
        ``(labels, powers, e_noise)``.
    """
    cfg = cfg or DetectorConfig()
    k_l, k_u = cfg.bins(filter_len, mic.sample_rate)
    X = _block_spectra(mic.samples, filter_len)
    Y = _block_spectra(outputs.samples, filter_len)
    powers = block_powers(X, Y, k_l, k_u)
    ex = powers.ex
    inner = ex[EDGE_BLOCKS:-1] if ex.size > 4 * EDGE_BLOCKS + 10 else ex
    e_noise = estimate_noise_floor(
        inner, filter_len / mic.sample_rate, cfg.smoothing, cfg.window_s, cfg.bias
    )
    return classify_blocks(powers, e_noise, cfg), powers, e_noise


def separate_two_pass(
    mic: MultichannelSignal,
    cfg: Optional[TriniconConfig] = None,
    detector: Optional[DetectorConfig] = None,
    warm_start: bool = False,
    renormalize: bool = False,
    rescale_for_detection: bool = True,
) -> TwoPassResult:
    """Run the first pass, detect activity and run the regularized second pass.

    Args:
        mic: two-channel mixture.
        cfg: TRINICON settings shared by both passes.
        detector: activity-detector settings.
        warm_start: start pass 2 from the pass-1 filter instead of the
            shifted unit impulse.
        renormalize: divide each source's weights by its active-block count
            rather than by ``N_sig``.
        rescale_for_detection: compare input power with minimal-distortion
            rescaled pass-1 outputs, so that both sit on the microphone scale.

    If every block is labelled silent, the pass-1 result is returned and
    ``diagnostics["fallback"]`` is set.
    """
    cfg = cfg or TriniconConfig()
    detector = detector or DetectorConfig()
    if mic.channels != 2:
        raise ValueError("two-pass separation needs a two-channel input")

    first = run_offline(mic, cfg)
    det_out = minimal_distortion(first.filter, mic) if rescale_for_detection else first.outputs
    labels, powers, e_noise = detect_activity(mic, det_out, cfg.filter_len, detector)
    n_sig = labels.shape[0]

    diagnostics = {
        "n_blocks": int(n_sig),
        "noise_floor": e_noise,
        "label_counts": {
            "none": int(np.sum((labels == 0).all(axis=1))),
            "only_1": int(np.sum((labels[:, 0] == 1) & (labels[:, 1] == 0))),
            "only_2": int(np.sum((labels[:, 0] == 0) & (labels[:, 1] == 1))),
            "both": int(np.sum((labels == 1).all(axis=1))),
        },
        "pass1_cost": list(first.cost_trace),
        "pass2_cost": [],
        "fallback": False,
        "warm_start": warm_start,
        "renormalize": renormalize,
        "trinicon": cfg.as_dict(),
        "detector": detector.as_dict(),
    }

    if not labels.any():
        logger.warning("no active blocks detected; returning the first-pass result")
        diagnostics["fallback"] = True
        return TwoPassResult(first.outputs, labels, first.filter, first, None, diagnostics)

    B = build_weight_matrices(labels, n_sig, renormalize=renormalize)
    weights = np.stack([B[:, 0, 0], B[:, 1, 1]], axis=1)
    second = run_offline(mic, cfg, source_weights=weights, init=first.filter if warm_start else None)
    diagnostics["pass2_cost"] = list(second.cost_trace)
    return TwoPassResult(second.outputs, labels, second.filter, first, second, diagnostics)
