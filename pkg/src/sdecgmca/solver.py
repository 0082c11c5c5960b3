"""
Joint deconvolution and blind source separation on the sphere.

The solver alternates a Tikhonov-regularized least-squares update of the
sources (per degree ``l``, in harmonic space) followed by soft-thresholding
of their starlet coefficients, and a least-squares update of the mixing
matrix followed by projection of its columns on the unit sphere.

By default the mixing-matrix update ignores the starlet coarse band (both
channels and sources are high-passed with ``1 - phi_J``). The coarse band
is never thresholded, so keeping it next to shrunk wavelet bands biases the
least-squares fit towards mixtures of the sources.

Array conventions: channels ``(Nc, nalm)``, sources ``(Ns, nalm)``,
beams ``(Nc, lmax + 1)``, mixing ``(Nc, Ns)``.
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
import logging
import time

import numpy as np

from . import linalg
from .errors import ConfigurationError, SingularMatrixError
from .sphere import (GridSpec, alm_degrees, alm_norm, analysis, convolve,
                     lmax_from_size, m_weights, power_spectrum)
from .starlet import build_bank, starlet_analysis_alm

log = logging.getLogger(__name__)

SNR_CAP = 1e12
SPECTRUM_FLOOR = 1e-12
MAD_SCALE = 1.4826


class Strategy(str, Enum):
    NAIVE = "naive"          # eps = c
    EIG_MAX = "eig_max"      # eps = c * lambda_max(M[l])
    EIG_FLOOR = "eig_floor"  # eps = max(0, c - lambda_min(M[l]) / lambda_min(A^T A))
    SNR = "snr"              # eps = c * noise power / source power


class Phase(str, Enum):
    WARMUP = "warmup"
    REFINEMENT = "refinement"


@dataclass
class RegStrategy:
    """Rule producing the Tikhonov weights eps[n, l].

    ``source_spectra`` (Ns, lmax+1) and ``noise_power`` are required for
    ``Strategy.SNR`` only.
    """

    kind: Strategy
    c: float
    source_spectra: np.ndarray = None
    noise_power: float = None

    def __post_init__(self):
        self.kind = Strategy(self.kind)
        if not self.c >= 0:
            raise ConfigurationError(f"regularization hyperparameter must be >= 0, got {self.c}")
        if self.kind is Strategy.SNR:
            if self.source_spectra is None or self.noise_power is None:
                raise ConfigurationError("SNR strategy needs source spectra and a noise level")
            if self.noise_power < 0:
                raise ConfigurationError("noise level must be non-negative")


def normal_matrices(a, beams):
    """M[l] = A^T diag(H[:, l])^2 A for every degree, shape (L, Ns, Ns)."""
    return np.einsum("vl,vi,vj->lij", np.asarray(beams) ** 2, a, a)


def epsilon(strategy, m, a, ell=None):
    """Tikhonov weights for normal matrices ``m`` (..., Ns, Ns).

    Parameters
    ----------
    strategy : RegStrategy
    m : ndarray
        One normal matrix or a stack indexed by degree.
    a : ndarray
        Current mixing matrix (needed by ``EIG_FLOOR``).
    ell : int or array of int, optional
        Degrees of the matrices in ``m``, used to index the spectra of the
        SNR strategy. Defaults to ``arange(len(m))`` for a stack.

    Returns
    -------
    ndarray, shape (..., Ns)
        Non-negative weights, one per source.
    """
    m = np.asarray(m, dtype=float)
    ns = m.shape[-1]
    shape = m.shape[:-1]
    c = strategy.c
    kind = strategy.kind
    if kind is Strategy.NAIVE:
        return np.full(shape, float(c))
    if kind is Strategy.EIG_MAX:
        w, _ = linalg.sym_eig(m)
        return np.broadcast_to((c * w[..., 0])[..., None], shape).copy()
    if kind is Strategy.EIG_FLOOR:
        w, _ = linalg.sym_eig(m)
        wa, _ = linalg.sym_eig(a.T @ a)
        eps = np.maximum(0.0, c - w[..., -1] / wa[-1])
        return np.broadcast_to(eps[..., None], shape).copy()
    # SNR
    if ell is None:
        ell = np.arange(m.shape[0]) if m.ndim == 3 else 0
    spec = np.asarray(strategy.source_spectra, dtype=float)
    if spec.shape[0] != ns:
        raise ConfigurationError("one spectrum per source is required")
    sig = np.moveaxis(spec[:, ell], 0, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        eps = np.where(sig > 0, c * strategy.noise_power / np.where(sig > 0, sig, 1.0),
                       SNR_CAP * c)
    return np.minimum(eps, SNR_CAP * c) if c > 0 else np.zeros_like(eps)


def update_s_tikhonov(channels, a, beams, strategy, return_eps=False):
    """Regularized least-squares sources for every (l, m).

    Solves ``(M[l] + diag(eps[:, l])) S[l, m] = A^T diag(H[:, l]) Y[l, m]``,
    factorizing once per degree.
    """
    channels = np.asarray(channels)
    beams = np.asarray(beams, dtype=float)
    lmax = lmax_from_size(channels.shape[-1])
    ell = alm_degrees(lmax)
    m = normal_matrices(a, beams)
    eps = epsilon(strategy, m, a)
    sys = m + eps[..., None] * np.eye(a.shape[1])
    try:
        low = linalg.cholesky(sys)
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            f"singular regularized normal matrix ({exc}); increase c") from exc
    rhs = a.T @ (beams[:, ell] * channels)
    s = linalg.cho_solve(low[ell], rhs.T).T
    return (s, eps) if return_eps else s


def soft_threshold(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def mad_sigma(coeffs):
    """Robust noise level per map: 1.4826 * median absolute deviation."""
    flat = coeffs.reshape(coeffs.shape[:-2] + (-1,))
    med = np.median(flat, axis=-1, keepdims=True)
    return MAD_SCALE * np.median(np.abs(flat - med), axis=-1)


def reweighted_thresholds(lam, prev):
    """Per-coefficient thresholds lam / (1 + |prev| / lam); 0 where lam = 0."""
    lam = lam[..., None, None]
    pos = lam > 0
    safe = np.where(pos, lam, 1.0)
    return np.where(pos, lam / (1.0 + np.abs(prev) / safe), 0.0)


def threshold_sources(s, grid, bank, k_mad, prev=None):
    """Soft-threshold the wavelet scales of each source, coarse scale kept.

    Parameters
    ----------
    s : ndarray (Ns, nalm)
    grid : GridSpec
    bank : StarletBank
    k_mad : float
        Thresholds are ``k_mad`` times the MAD noise estimate of each scale.
    prev : ndarray, optional
        Thresholded coefficients of the previous iteration, shape
        (Ns, J+1, nlat, nlon); enables l1 reweighting.

    Returns
    -------
    s_new : ndarray (Ns, nalm)
    coeffs : ndarray (Ns, J+1, nlat, nlon)
        Thresholded wavelet scales followed by the untouched coarse scale.
    lam : ndarray (Ns, J, nlat, nlon)
        Thresholds actually applied.
    """
    if k_mad < 0:
        raise ConfigurationError("k_mad must be non-negative")
    j = bank.nscales
    w = starlet_analysis_alm(s, grid, bank)
    wav = w[:, :j]
    lam = k_mad * mad_sigma(wav)
    if prev is not None:
        lam = reweighted_thresholds(lam, prev[:, :j])
    else:
        lam = np.broadcast_to(lam[..., None, None], wav.shape)
    wav_t = soft_threshold(wav, lam)
    s_new = analysis(np.sum(wav_t, axis=1), grid) + convolve(s, bank.coarse_filter)
    coeffs = np.concatenate([wav_t, w[:, j:]], axis=1)
    return s_new, coeffs, lam


@lru_cache(maxsize=8)
def _degree_order(lmax):
    """Permutation sorting coefficients by degree, and the start of each
    degree in the sorted order."""
    ell = alm_degrees(lmax)
    order = np.argsort(ell, kind="stable")
    starts = np.searchsorted(ell[order], np.arange(lmax + 1))
    return order, starts


def _gram_per_degree(x, y):
    """G[l, i, j] = sum over m (weighted) of Re(x_i conj(y_j)) at degree l."""
    lmax = lmax_from_size(x.shape[-1])
    order, starts = _degree_order(lmax)
    prod = np.real((m_weights(lmax) * x)[:, None, :] * np.conj(y)[None, :, :])
    return np.moveaxis(np.add.reduceat(prod[..., order], starts, axis=-1), -1, 0)


def channel_covariance(channels):
    return np.real((m_weights(lmax_from_size(channels.shape[-1])) * channels)
                   @ np.conj(channels).T)


def _fix_signs(v):
    idx = np.argmax(np.abs(v), axis=0)
    sgn = np.sign(v[idx, np.arange(v.shape[1])])
    return v * np.where(sgn == 0, 1.0, sgn)


def pca_init(channels, n_sources):
    """Leading principal directions of the channels as an initial mixing
    matrix; unit columns, largest-magnitude entry of each column positive."""
    channels = np.asarray(channels)
    if n_sources > channels.shape[0]:
        raise ConfigurationError("more sources than channels")
    _, v = linalg.sym_eig(channel_covariance(channels))
    a = v[:, :n_sources]
    a = a / np.linalg.norm(a, axis=0)
    return _fix_signs(a)


def update_a(channels, s, beams, notes=None):
    """Least-squares mixing matrix for fixed sources, columns normalized.

    Each row solves ``A_nu G_nu = R_nu`` with
    ``G_nu = sum_lm H_nu[l]^2 S S^H`` and ``R_nu = sum_lm H_nu[l] Y_nu S^H``
    (real parts, m-weighted). Sources that are identically zero get their
    column from the leading principal direction of the residual instead;
    this is reported through ``notes`` (a list) and the log.
    """
    channels = np.asarray(channels)
    beams = np.asarray(beams, dtype=float)
    lmax = lmax_from_size(channels.shape[-1])
    ell = alm_degrees(lmax)
    nc, ns = channels.shape[0], s.shape[0]
    norms = np.sqrt(np.sum(m_weights(lmax) * np.abs(s) ** 2, axis=1))
    live = norms > 1e-12 * norms.max() if norms.max() > 0 else np.zeros(ns, dtype=bool)
    a = np.zeros((nc, ns))
    if np.any(live):
        sl = s[live]
        gram_l = _gram_per_degree(sl, sl)
        gram = np.einsum("vl,lij->vij", beams ** 2, gram_l)
        rhs = np.real((m_weights(lmax) * beams[:, ell] * channels) @ np.conj(sl).T)
        try:
            rows = linalg.solve_spd(gram, rhs)
        except SingularMatrixError:
            rows = np.einsum("vij,vj->vi", linalg.pinv(gram), rhs)
        a[:, live] = rows
    dead = np.flatnonzero(~live)
    if dead.size:
        resid = channels - beams[:, ell] * (a @ s)
        _, v = linalg.sym_eig(channel_covariance(resid))
        a[:, dead] = _fix_signs(v[:, :dead.size])
        msg = f"sources {dead.tolist()} vanished; columns reset from residual PCA"
        log.warning(msg)
        if notes is not None:
            notes.append(msg)
    colnorm = np.linalg.norm(a, axis=0)
    bad = colnorm == 0
    if np.any(bad):
        a[:, bad] = 1.0
        colnorm[bad] = np.sqrt(nc)
    return a / colnorm


def objective_value(channels, a, s, beams, lam=None, grid=None, bank=None):
    """Data fidelity 1/2 sum ||Y - H A S||^2 plus sum lam * |S Phi^T| over
    wavelet scales (the l1 term is skipped when ``lam`` is None)."""
    channels = np.asarray(channels)
    lmax = lmax_from_size(channels.shape[-1])
    resid = channels - beams[:, alm_degrees(lmax)] * (a @ s)
    value = 0.5 * alm_norm(resid) ** 2
    if lam is not None:
        lam = np.asarray(lam)
        if np.any(lam):
            grid = grid or GridSpec.default(lmax)
            bank = bank or build_bank(lmax)
            w = starlet_analysis_alm(s, grid, bank)[:, :bank.nscales]
            value += float(np.sum(lam * np.abs(w)))
    return float(value)


@dataclass
class SolverConfig:
    n_sources: int = 4
    c_wu_start: float = 1.0
    c_wu_end: float = 0.1
    c_ref: float = 1.0
    k_mad: float = 3.0
    max_iters: int = 200
    min_warmup_iters: int = 10
    warmup_tol: float = 1e-2
    final_tol: float = 1e-4
    reweight: bool = True
    nscales: int = None
    warmup_strategy: Strategy = Strategy.EIG_FLOOR
    refinement_strategy: Strategy = Strategy.SNR
    decay_iters: int = 50
    a_update_highpass: bool = True

    def __post_init__(self):
        self.warmup_strategy = Strategy(self.warmup_strategy)
        self.refinement_strategy = Strategy(self.refinement_strategy)
        self.validate()

    def validate(self):
        if not self.c_wu_start >= self.c_wu_end > 0:
            raise ConfigurationError("c_wu_start >= c_wu_end > 0 violated")
        if self.c_ref < 0:
            raise ConfigurationError("c_ref >= 0 violated")
        if not (self.warmup_tol > 0 and self.final_tol > 0):
            raise ConfigurationError("tolerances must be > 0")
        if self.n_sources < 1 or self.max_iters < 1 or self.decay_iters < 1:
            raise ConfigurationError("n_sources, max_iters, decay_iters must be >= 1")
        if self.k_mad < 0:
            raise ConfigurationError("k_mad >= 0 violated")

    def warmup_c(self, it):
        frac = min(it, self.decay_iters) / self.decay_iters
        return self.c_wu_start * (self.c_wu_end / self.c_wu_start) ** frac


@dataclass
class SolverState:
    a: np.ndarray
    s: np.ndarray
    phase: Phase = Phase.WARMUP
    iter: int = 0
    history: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    converged: bool = False
    wallclock_s: float = 0.0
    # thresholded starlet coefficients of the last iteration (reweighting)
    coeffs: np.ndarray = field(default=None, repr=False)

    @property
    def phases(self):
        return [row["phase"] for row in self.history]

    def copy(self):
        return SolverState(self.a.copy(), self.s.copy(), self.phase, self.iter,
                           [dict(r) for r in self.history], list(self.notes),
                           self.converged, self.wallclock_s,
                           None if self.coeffs is None else self.coeffs.copy())


def refinement_spectra(s):
    """Power spectra of the current estimate, floored relative to their peak."""
    spec = power_spectrum(s)
    floor = SPECTRUM_FLOOR * spec.max(axis=1, keepdims=True)
    return np.maximum(spec, floor)


def _strategy(kind, c, s, noise_sigma):
    if Strategy(kind) is Strategy.SNR:
        return RegStrategy(kind, c, refinement_spectra(s), noise_sigma ** 2)
    return RegStrategy(kind, c)


def solve(channels, beams, cfg, noise_sigma, a_init=None, callback=None,
          resume=None, warmup_only=False):
    """Run the warm-up / refinement alternating scheme.

    Parameters
    ----------
    channels : ndarray (Nc, nalm)
    beams : ndarray (Nc, lmax+1)
        Pass beams normalized to the best channel to estimate the sources at
        that channel's resolution.
    cfg : SolverConfig
    noise_sigma : float
        Standard deviation of the white harmonic noise.
    a_init : ndarray, optional
        Initial mixing matrix; PCA of the channels when omitted.
    callback : callable, optional
        Called as ``callback(state)`` after every iteration.
    resume : SolverState, optional
        Continue from a previous state (it is copied, not modified).
    warmup_only : bool
        Return as soon as the warm-up has converged, before the first
        refinement iteration. Several refinements (e.g. for different
        ``c_ref``) can then share one warm-up through ``resume``.

    Returns
    -------
    SolverState
    """
    t0 = time.perf_counter()
    channels = np.asarray(channels)
    beams = np.asarray(beams, dtype=float)
    lmax = lmax_from_size(channels.shape[-1])
    if beams.shape != (channels.shape[0], lmax + 1):
        raise ConfigurationError(f"beams shape {beams.shape} inconsistent with channels")
    grid = GridSpec.default(lmax)
    bank = build_bank(lmax, cfg.nscales)
    highpass = 1.0 - bank.coarse_filter
    if cfg.a_update_highpass:
        channels_hp = convolve(channels, highpass)

    if resume is not None:
        state = resume.copy()
    else:
        if a_init is None:
            a = pca_init(channels, cfg.n_sources)
        else:
            a = np.array(a_init, dtype=float)
            a = a / np.linalg.norm(a, axis=0)
        state = SolverState(a=a, s=np.zeros((cfg.n_sources, channels.shape[1]), dtype=complex))
    elapsed = state.wallclock_s

    for it in range(state.iter, cfg.max_iters):
        if warmup_only and state.phase is Phase.REFINEMENT:
            break
        if state.phase is Phase.WARMUP:
            c = cfg.warmup_c(it)
            kind = cfg.warmup_strategy
        else:
            c = cfg.c_ref
            kind = cfg.refinement_strategy
        strat = _strategy(kind, c, state.s, noise_sigma)
        try:
            s_ls, eps = update_s_tikhonov(channels, state.a, beams, strat, return_eps=True)
        except SingularMatrixError as exc:
            raise SingularMatrixError(f"iteration {it} ({state.phase.value}): {exc}") from exc
        s, coeffs, lam = threshold_sources(s_ls, grid, bank, cfg.k_mad,
                                           state.coeffs if cfg.reweight else None)
        if cfg.a_update_highpass:
            a = update_a(channels_hp, convolve(s, highpass), beams, state.notes)
        else:
            a = update_a(channels, s, beams, state.notes)

        s_norm = alm_norm(state.s)
        rel = alm_norm(s - state.s) / s_norm if s_norm > 0 else np.inf
        state.a, state.s, state.coeffs, state.iter = a, s, coeffs, it + 1
        state.history.append({
            "iter": it,
            "phase": state.phase.value,
            "objective": objective_value(channels, a, s, beams, lam, grid, bank),
            "rel_change": float(rel),
            "c_effective": float(c),
            "mean_epsilon": float(np.mean(eps)),
        })
        if callback is not None:
            callback(state)
        if state.phase is Phase.WARMUP:
            if it + 1 >= cfg.min_warmup_iters and rel < cfg.warmup_tol:
                state.phase = Phase.REFINEMENT
        elif rel < cfg.final_tol:
            state.converged = True
            break
    state.wallclock_s = elapsed + time.perf_counter() - t0
    return state


def gmca_baseline(channels, cfg, noise_sigma, a_init=None):
    """Separation without deconvolution: ``solve`` with identity beams.

    The caller is expected to have brought all channels to a common
    resolution beforehand.
    """
    channels = np.asarray(channels)
    lmax = lmax_from_size(channels.shape[-1])
    beams = np.ones((channels.shape[0], lmax + 1))
    return solve(channels, beams, cfg, noise_sigma, a_init=a_init)
