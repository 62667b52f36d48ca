"""Dual-channel frequency-domain TRINICON blind source separation with
multi-source activity detection, plus room simulation and BSS_EVAL-style
scoring."""

__version__ = "0.1.0"

from .activity import DetectorConfig, build_weight_matrices, classify_blocks
from .bsseval import decompose, score
from .pipeline import separate_two_pass
from .room import RoomScenario, generate_rir, synthesize_mixture
from .signal import MultichannelSignal, load_wav, write_wav
from .trinicon import DemixingFilter, TriniconConfig, run_offline

__all__ = [
    "DetectorConfig",
    "DemixingFilter",
    "MultichannelSignal",
    "RoomScenario",
    "TriniconConfig",
    "build_weight_matrices",
    "classify_blocks",
    "decompose",
    "generate_rir",
    "load_wav",
    "run_offline",
    "score",
    "separate_two_pass",
    "synthesize_mixture",
    "write_wav",
]
