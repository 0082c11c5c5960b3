"""
Toy multichannel scenes: sparse band-limited sources, Gaussian beams on a
resolution ladder, a mixing matrix with prescribed condition number and
white harmonic noise at a given SNR.
"""

from dataclasses import asdict, dataclass, field
import logging
import math

import numpy as np

from . import linalg
from .errors import ConfigurationError
from .sphere import (GridSpec, alm_degrees, alm_norm, alm_orders, alm_size,
                     legendre_table, lmax_from_size, white_noise_alm)
from .starlet import b3spline

log = logging.getLogger(__name__)

# sub-stream tags for seed derivation
_SOURCES, _MIXING, _NOISE = 0, 1, 2


@dataclass
class SceneConfig:
    """Parameters of a simulated scene.

    ``source_band_limit``, ``beam_lmin`` and ``beam_lmax`` default to the
    ratios lmax/6, lmax/8 and lmax.
    """

    lmax: int = 64
    n_sources: int = 4
    n_channels: int = 8
    cond_target: float = 2.0
    source_band_limit: int = None
    beam_lmin: float = None
    beam_lmax: float = None
    snr_db: float = 10.0
    sparsity_count: int = 30
    seed: int = 1

    def __post_init__(self):
        if self.source_band_limit is None:
            self.source_band_limit = self.lmax // 6
        if self.beam_lmin is None:
            self.beam_lmin = self.lmax / 8
        if self.beam_lmax is None:
            self.beam_lmax = self.lmax
        self.validate()

    def validate(self):
        if self.lmax < 1:
            raise ConfigurationError("lmax >= 1 violated")
        if not 1 <= self.n_sources <= self.n_channels:
            raise ConfigurationError(
                f"Ns <= Nc violated (Ns={self.n_sources}, Nc={self.n_channels})")
        if not 0 <= self.source_band_limit <= self.lmax:
            raise ConfigurationError("source_band_limit <= lmax violated")
        if not 0 < self.beam_lmin < self.beam_lmax <= self.lmax:
            raise ConfigurationError(
                "0 < beam_lmin < beam_lmax <= lmax violated "
                f"(beam_lmin={self.beam_lmin}, beam_lmax={self.beam_lmax}, lmax={self.lmax})")
        if self.cond_target < 1:
            raise ConfigurationError("cond_target >= 1 violated")
        if self.sparsity_count < 1:
            raise ConfigurationError("sparsity_count >= 1 violated")

    def to_dict(self):
        return asdict(self)


@dataclass
class Scene:
    config: SceneConfig
    sources: np.ndarray      # (Ns, nalm) ground truth S*
    mixing: np.ndarray       # (Nc, Ns) A*, unit columns
    beams: np.ndarray        # (Nc, lmax+1)
    resolutions: np.ndarray  # (Nc,)
    channels: np.ndarray     # (Nc, nalm) observed Y
    noise_sigma: float
    noise: np.ndarray = field(repr=False, default=None)
    mixing_converged: bool = True


def _rng(seed, tag):
    return np.random.default_rng([int(seed), tag])


def source_lowpass(lmax, band_limit):
    """Smooth isotropic low-pass, exactly zero for l > band_limit."""
    ell = np.arange(lmax + 1)
    return 1.5 * b3spline(2.0 * ell / (band_limit + 1))


def make_sources(cfg):
    """Sparse band-limited sources with unit harmonic Frobenius norm each.

    Each source is a sum of ``sparsity_count`` point impulses placed on
    grid pixels (drawn uniformly over the sphere) with |N(0,1)| amplitudes,
    smoothed by ``source_lowpass``.
    """
    rng = _rng(cfg.seed, _SOURCES)
    grid = GridSpec.default(cfg.lmax)
    weights = grid.pixel_weights.ravel()
    prob = weights / weights.sum()
    lp = source_lowpass(cfg.lmax, cfg.source_band_limit)[alm_degrees(cfg.lmax)]
    em = alm_orders(cfg.lmax)
    out = np.zeros((cfg.n_sources, alm_size(cfg.lmax)), dtype=complex)
    for n in range(cfg.n_sources):
        pix = rng.choice(weights.size, size=cfg.sparsity_count, replace=False, p=prob)
        amp = np.abs(rng.standard_normal(cfg.sparsity_count))
        ilat, ilon = np.unravel_index(pix, grid.shape)
        table = legendre_table(cfg.lmax, grid.cos_theta[ilat])
        phase = np.exp(-1j * np.outer(grid.phi[ilon], em))
        alm = np.sum(amp[:, None] * table * phase, axis=0) * lp
        out[n] = alm / alm_norm(alm)
    return out


def make_beams(cfg):
    """Gaussian transfer functions exp(-l(l+1) / (2 r^2)) for resolutions r
    evenly spaced on [beam_lmin, beam_lmax]; the last channel is the best
    resolved."""
    res = np.linspace(cfg.beam_lmin, cfg.beam_lmax, cfg.n_channels)
    ell = np.arange(cfg.lmax + 1)
    beams = np.exp(-ell * (ell + 1) / (2.0 * res[:, None] ** 2))
    return beams, res


def normalize_columns(a):
    return a / np.linalg.norm(a, axis=0, keepdims=True)


def make_mixing(cfg, max_passes=50):
    """Random mixing matrix with unit columns and cond close to cond_target.

    Returns ``(a, converged)``; ``converged`` is False when the relative
    condition-number error is still above 5% after ``max_passes``.
    """
    rng = _rng(cfg.seed, _MIXING)
    nc, ns = cfg.n_channels, cfg.n_sources
    ramp = np.linspace(cfg.cond_target, 1.0, ns)
    a = rng.standard_normal((nc, ns))
    converged = False
    for _ in range(max_passes):
        u, _, vt = np.linalg.svd(a, full_matrices=False)
        a = normalize_columns((u * ramp) @ vt)
        if abs(linalg.cond(a) - cfg.cond_target) < 0.05 * cfg.cond_target:
            converged = True
            break
    if not converged:
        log.warning("mixing matrix: cond %.3f after %d passes (target %.3f)",
                    linalg.cond(a), max_passes, cfg.cond_target)
    return a, converged


def forward(sources, mixing, beams):
    """Noiseless channels Y_nu[l,m] = H_nu[l] * sum_n A[nu,n] S_n[l,m]."""
    sources = np.asarray(sources)
    mixing = np.asarray(mixing, dtype=float)
    beams = np.asarray(beams, dtype=float)
    if mixing.shape != (beams.shape[0], sources.shape[0]):
        raise ConfigurationError(
            f"shape mismatch: mixing {mixing.shape}, {sources.shape[0]} sources, "
            f"{beams.shape[0]} beams")
    ell = alm_degrees(beams.shape[1] - 1)
    if ell.size != sources.shape[1]:
        raise ConfigurationError("beam and source band limits differ")
    return beams[:, ell] * (mixing @ sources)


def add_noise(channels, snr_db, seed):
    """Add white harmonic noise at ``snr_db`` = 20 log10(||X|| / ||N||).

    The noise realization is rescaled so that the realized SNR is exact.
    Returns ``(noisy, sigma, noise)``; ``sigma`` is the per-coefficient
    standard deviation (flat noise power spectrum level is sigma**2).
    """
    channels = np.asarray(channels)
    if math.isinf(snr_db) and snr_db > 0:
        return channels.copy(), 0.0, np.zeros_like(channels)
    signal = alm_norm(channels)
    if signal == 0:
        raise ValueError("cannot set an SNR on a zero signal")
    lmax = lmax_from_size(channels.shape[-1])
    unit = white_noise_alm(lmax, 1.0, [int(seed), _NOISE], size=channels.shape[0])
    sigma = signal / (10 ** (snr_db / 20.0) * alm_norm(unit))
    noise = sigma * unit
    return channels + noise, float(sigma), noise


def best_channel(beams):
    """Index of the best-resolved channel (largest total transfer)."""
    total = np.sum(beams, axis=1)
    return int(np.flatnonzero(total == total.max())[-1])


def worst_channel(beams):
    total = np.sum(beams, axis=1)
    return int(np.flatnonzero(total == total.min())[0])


def normalize_to_best_channel(beams):
    """Express every beam relative to the best-resolved one."""
    beams = np.asarray(beams, dtype=float)
    ref = beams[best_channel(beams)]
    if np.any(ref == 0):
        raise ValueError("best-channel beam has zero entries (degenerate beam)")
    return beams / ref


def simulate(cfg):
    cfg.validate()
    sources = make_sources(cfg)
    beams, res = make_beams(cfg)
    mixing, ok = make_mixing(cfg)
    clean = forward(sources, mixing, beams)
    channels, sigma, noise = add_noise(clean, cfg.snr_db, cfg.seed)
    return Scene(cfg, sources, mixing, beams, res, channels, sigma, noise, ok)
