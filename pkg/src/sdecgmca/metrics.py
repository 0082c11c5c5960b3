"""
Separation quality metrics: source NMSE and mixing-matrix criterion, both
in dB (higher is better), computed after resolving the permutation and
sign ambiguity of blind separation.
"""

from dataclasses import dataclass
import itertools

import numpy as np

from . import linalg
from .simulate import best_channel, worst_channel
from .sphere import alm_norm, convolve

DB_CAP = 300.0
EXHAUSTIVE_MAX = 6
ROUNDOFF = 100.0


@dataclass(frozen=True)
class Alignment:
    """Estimated column ``perm[k]`` times ``signs[k]`` matches true column k."""

    perm: tuple
    signs: tuple

    def apply_columns(self, a):
        return np.asarray(a)[:, list(self.perm)] * np.asarray(self.signs)

    def apply_sources(self, s):
        return np.asarray(s)[list(self.perm)] * np.asarray(self.signs)[:, None]


def _correlation(a_est, a_true):
    a_est = np.asarray(a_est, dtype=float)
    a_true = np.asarray(a_true, dtype=float)
    ne = np.linalg.norm(a_est, axis=0)
    nt = np.linalg.norm(a_true, axis=0)
    return (a_true.T @ a_est) / np.outer(nt, np.where(ne > 0, ne, 1.0))


def align(a_est, a_true):
    """Match estimated mixing columns to true ones by |correlation|.

    Exhaustive search over permutations for up to 6 sources, greedy
    assignment on the largest remaining |correlation| above that.
    """
    corr = _correlation(a_est, a_true)  # corr[true, est]
    ns = corr.shape[0]
    mag = np.abs(corr)
    if ns <= EXHAUSTIVE_MAX:
        best, perm = -np.inf, None
        for p in itertools.permutations(range(ns)):
            score = mag[np.arange(ns), p].sum()
            if score > best:
                best, perm = score, p
    else:
        perm = [None] * ns
        work = mag.copy()
        for _ in range(ns):
            t, e = np.unravel_index(np.argmax(work), work.shape)
            perm[t] = int(e)
            work[t, :] = -1
            work[:, e] = -1
    perm = tuple(int(p) for p in perm)
    signs = tuple(1 if corr[k, perm[k]] >= 0 else -1 for k in range(ns))
    return Alignment(perm, signs)


def _to_db(ratio, factor):
    if ratio == 0:
        return DB_CAP
    return float(min(DB_CAP, -factor * np.log10(ratio)))


def nmse_db(s_est, s_true, beam_ref, alignment=None):
    """-20 log10(||H_ref * S_true - S|| / ||H_ref * S_true||), capped at 300."""
    ref = convolve(s_true, beam_ref)
    den = alm_norm(ref)
    if den == 0:
        raise ValueError("reference sources are identically zero")
    est = s_est if alignment is None else alignment.apply_sources(s_est)
    return _to_db(alm_norm(ref - est) / den, 20.0)


def ca_db(a_est, a_true, alignment=None):
    """-10 log10(mean |pinv(A) A* - I|) after alignment, capped at 300."""
    if alignment is None:
        alignment = align(a_est, a_true)
    a = alignment.apply_columns(a_est)
    kappa = linalg.cond(a)
    if not np.isfinite(kappa):
        raise ValueError("estimated mixing matrix is rank deficient")
    delta = np.abs(linalg.pinv(a) @ np.asarray(a_true) - np.eye(a.shape[1]))
    # entries at the rounding level of the pseudo-inverse count as exact
    delta[delta < ROUNDOFF * kappa * np.finfo(float).eps] = 0.0
    return _to_db(float(np.mean(delta)), 10.0)


def degrade_to_worst(s, beams_original):
    """Bring best-resolution estimates to the worst channel's resolution."""
    beams_original = np.asarray(beams_original, dtype=float)
    best = beams_original[best_channel(beams_original)]
    worst = beams_original[worst_channel(beams_original)]
    if np.any(best == 0):
        raise ValueError("best-channel beam has zero entries")
    return convolve(s, worst / best)
