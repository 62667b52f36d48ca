"""SIR / SDR by least-squares decomposition against reference source images.

An estimate is split as ``estimate = s_target + e_interf + e_artif``:
``s_target`` is its projection on ``proj_len`` delayed copies of the assigned
reference, ``s_target + e_interf`` its projection on the delayed copies of
both references, and ``e_artif`` the remainder.  The estimate is zero-padded
by ``proj_len - 1`` samples so that the filtered references fit.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.linalg
from scipy.signal import fftconvolve

logger = logging.getLogger(__name__)

__all__ = ["Decomposition", "EvalScores", "decompose", "score", "DB_CAP"]

DB_CAP = 100.0


@dataclass
class Decomposition:
    s_target: np.ndarray
    e_interf: np.ndarray
    e_artif: np.ndarray

    @property
    def estimate(self) -> np.ndarray:
        return self.s_target + self.e_interf + self.e_artif

    def sir(self) -> float:
        return _ratio_db(self.s_target, self.e_interf)

    def sdr(self) -> float:
        return _ratio_db(self.s_target, self.e_interf + self.e_artif)


@dataclass
class EvalScores:
    """Scores per output channel under the selected permutation.

    ``perm[q]`` is the (0-based) reference matched to output ``q``.
    """

    sir: np.ndarray
    sdr: np.ndarray
    perm: Tuple[int, int]
    proj_len: int

    @property
    def mean_sir(self) -> float:
        return float(np.mean(self.sir))

    @property
    def mean_sdr(self) -> float:
        return float(np.mean(self.sdr))


def _ratio_db(num, den) -> float:
    en = float(np.dot(num, num))
    ed = float(np.dot(den, den))
    if ed == 0.0:
        return DB_CAP if en > 0 else 0.0
    if en == 0.0:
        return -DB_CAP
    return float(np.clip(10 * np.log10(en / ed), -DB_CAP, DB_CAP))


class _Projector:
    """Gram matrix of the delayed references, shared by every estimate."""

    def __init__(self, refs: np.ndarray, proj_len: int):
        self.refs = refs
        self.P = proj_len
        n_src, n = refs.shape
        self.nfft = int(2 ** np.ceil(np.log2(n + proj_len)))
        self.ref_f = np.fft.rfft(refs, n=self.nfft, axis=1)
        P = proj_len
        G = np.empty((n_src * P, n_src * P))
        for i in range(n_src):
            for j in range(i, n_src):
                xc = np.fft.irfft(self.ref_f[i].conj() * self.ref_f[j], n=self.nfft)
                # block[a, b] = sum_u r_i(u) r_j(u + a - b)
                col = xc[np.r_[0, self.nfft - 1 : self.nfft - P : -1]] if P > 1 else xc[:1]
                row = xc[:P]
                block = scipy.linalg.toeplitz(col, row)
                G[i * P : (i + 1) * P, j * P : (j + 1) * P] = block.T
                G[j * P : (j + 1) * P, i * P : (i + 1) * P] = block
        self.G = G

    def correlations(self, est: np.ndarray) -> np.ndarray:
        ef = np.fft.rfft(est, n=self.nfft)
        xc = np.fft.irfft(self.ref_f.conj() * ef, n=self.nfft, axis=1)
        return xc[:, : self.P]

    def project(self, corr: np.ndarray, which) -> np.ndarray:
        P = self.P
        idx = np.concatenate([np.arange(i * P, (i + 1) * P) for i in which])
        coef = _solve(self.G[np.ix_(idx, idx)], corr[list(which)].ravel())
        n = self.refs.shape[1]
        out = np.zeros(n + P - 1)
        for k, i in enumerate(which):
            out += fftconvolve(self.refs[i], coef[k * P : (k + 1) * P])[: n + P - 1]
        return out


def _solve(G, d):
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(G, check_finite=False), d)
    except np.linalg.LinAlgError:
        ridge = 1e-10 * max(float(np.trace(G)) / G.shape[0], 1e-300)
        logger.warning("singular reference Gram matrix (silent reference?); using ridge %.3g", ridge)
        return scipy.linalg.solve(G + ridge * np.eye(G.shape[0]), d, assume_a="sym")


def _check(estimate, references, proj_len):
    est = np.asarray(estimate, dtype=np.float64)
    refs = np.atleast_2d(np.asarray(references, dtype=np.float64))
    if est.ndim != 1 or refs.shape[1] != est.size:
        raise ValueError("estimate and references must have equal lengths")
    if proj_len < 1:
        raise ValueError("proj_len must be >= 1")
    return est, refs


def _decompose(proj: _Projector, est: np.ndarray, target: int) -> Decomposition:
    P = proj.P
    est_pad = np.concatenate([est, np.zeros(P - 1)])
    corr = proj.correlations(est)
    s_target = proj.project(corr, [target])
    s_all = proj.project(corr, list(range(proj.refs.shape[0])))
    e_interf = s_all - s_target
    e_artif = est_pad - s_target - e_interf
    return Decomposition(s_target, e_interf, e_artif)


def decompose(estimate, references, target: int = 0, proj_len: int = 512) -> Decomposition:
    """Split ``estimate`` into target, interference and artifact parts.

    Args:
        estimate: 1-D signal.
        references: ``(n_sources, n_samples)`` reference images.
        target: index of the reference assigned to this estimate.
        proj_len: length of the allowed distortion filter.
    """
    est, refs = _check(estimate, references, proj_len)
    return _decompose(_Projector(refs, proj_len), est, target)


def score(outputs, references, proj_len: int = 512) -> EvalScores:
    """SIR and SDR of two outputs under the permutation with the best mean SIR."""
    outputs = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    refs = np.atleast_2d(np.asarray(references, dtype=np.float64))
    if outputs.shape != refs.shape:
        raise ValueError(f"outputs {outputs.shape} and references {refs.shape} differ in shape")
    n_src = refs.shape[0]
    proj = _Projector(refs, proj_len)
    sir = np.empty((n_src, n_src))
    sdr = np.empty((n_src, n_src))
    for q in range(n_src):
        for j in range(n_src):
            dec = _decompose(proj, outputs[q], j)
            sir[q, j] = dec.sir()
            sdr[q, j] = dec.sdr()
    best = max(
        itertools.permutations(range(n_src)),
        key=lambda perm: np.mean([sir[q, perm[q]] for q in range(n_src)]),
    )
    rows = np.arange(n_src)
    cols = np.asarray(best)
    return EvalScores(sir[rows, cols], sdr[rows, cols], tuple(int(v) for v in best), proj_len)
