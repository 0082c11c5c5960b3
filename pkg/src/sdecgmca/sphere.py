"""
Band-limited spherical harmonic transforms on a Gauss-Legendre grid.

Harmonic coefficients of real fields are stored for ``m >= 0`` only, in
m-major order with ``l`` ascending inside each ``m`` block (the usual
healpy layout). Negative orders follow from
``a[l, -m] = (-1)**m * conj(a[l, m])``. Any array whose last axis has
length ``alm_size(lmax)`` is treated as (a stack of) coefficient sets, and
maps are real arrays whose two last axes are ``(nlat, nlon)``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError

_RESCALE = 1e150
_LOG_RESCALE = np.log(_RESCALE)


def alm_size(lmax):
    return (lmax + 1) * (lmax + 2) // 2


def lmax_from_size(size):
    lmax = int(round((np.sqrt(8 * size + 1) - 3) / 2))
    if alm_size(lmax) != size:
        raise ConfigurationError(f"{size} is not a valid coefficient count")
    return lmax


def alm_index(l, m, lmax):
    """Position of ``(l, m)`` in the m-major layout."""
    return m * (2 * lmax + 3 - m) // 2 + l - m


@lru_cache(maxsize=None)
def _layout(lmax):
    ell = np.concatenate([np.arange(m, lmax + 1) for m in range(lmax + 1)])
    em = np.concatenate([np.full(lmax + 1 - m, m) for m in range(lmax + 1)])
    starts = np.array([alm_index(m, m, lmax) for m in range(lmax + 2)])
    for arr in (ell, em, starts):
        arr.setflags(write=False)
    return ell, em, starts


def alm_degrees(lmax):
    """Degree ``l`` of every stored coefficient."""
    return _layout(lmax)[0]


def alm_orders(lmax):
    """Order ``m`` of every stored coefficient."""
    return _layout(lmax)[1]


def m_weights(lmax):
    """Weight 1 for m = 0 and 2 for m > 0, so that sums over stored
    coefficients equal sums over the full ``-l <= m <= l`` range."""
    return np.where(alm_orders(lmax) == 0, 1.0, 2.0)


def alm_dot(a, b):
    """Real inner product of two real-field coefficient sets, summed over
    the full range of orders."""
    a = np.asarray(a)
    b = np.asarray(b)
    lmax = lmax_from_size(a.shape[-1])
    return np.sum(m_weights(lmax) * np.real(a * np.conj(b)), axis=-1)


def alm_norm(a):
    """Frobenius norm over all trailing coefficient sets of ``a``."""
    return float(np.sqrt(np.sum(alm_dot(a, a))))


@dataclass(frozen=True)
class GridSpec:
    """Gauss-Legendre latitudes times equispaced longitudes.

    Latitudes run from the north pole towards the south pole; the first
    longitude is at phi = 0.
    """

    lmax: int
    nlat: int
    nlon: int

    def __post_init__(self):
        if self.lmax < 0:
            raise ConfigurationError("lmax must be non-negative")
        if self.nlat < self.lmax + 1:
            raise ConfigurationError(
                f"nlat={self.nlat} too small for lmax={self.lmax} (need >= lmax+1)")
        if self.nlon < 2 * self.lmax + 1:
            raise ConfigurationError(
                f"nlon={self.nlon} too small for lmax={self.lmax} (need >= 2*lmax+1)")

    @classmethod
    def default(cls, lmax):
        return cls(lmax, lmax + 1, 2 * lmax + 2)

    @property
    def shape(self):
        return (self.nlat, self.nlon)

    @property
    def cos_theta(self):
        return _gauss_legendre(self.nlat)[0]

    @property
    def theta(self):
        return np.arccos(self.cos_theta)

    @property
    def phi(self):
        return 2 * np.pi * np.arange(self.nlon) / self.nlon

    @property
    def lat_weights(self):
        """Gauss-Legendre weights; they sum to 2."""
        return _gauss_legendre(self.nlat)[1]

    @property
    def pixel_weights(self):
        """Quadrature weight (solid angle) of every pixel; sums to 4 pi."""
        return np.repeat(self.lat_weights[:, None] * (2 * np.pi / self.nlon),
                         self.nlon, axis=1)


@lru_cache(maxsize=None)
def _gauss_legendre(nlat):
    x, w = np.polynomial.legendre.leggauss(nlat)
    x, w = x[::-1].copy(), w[::-1].copy()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def legendre_table(lmax, x):
    """Orthonormal associated Legendre functions lambda_lm(x).

    Includes the Condon-Shortley phase, so that
    ``Y_lm(theta, phi) = lambda_lm(cos theta) * exp(i m phi)``.

    Parameters
    ----------
    lmax : int
        Band limit.
    x : array_like
        Points in [-1, 1], typically ``cos(theta)``.

    Returns
    -------
    ndarray, shape (len(x), alm_size(lmax))
        Values in the m-major coefficient layout.

    Notes
    -----
    Each order is run with the standard three-term recurrence ascending in
    ``l``. The sectoral seed ``lambda_mm ~ sin(theta)**m`` is carried as a
    mantissa and a log scale, and the mantissa is rescaled whenever it grows
    large, so that no intermediate underflows before the recurrence has had
    a chance to bring the value back up (needed above l ~ 150).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sin_t = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    with np.errstate(divide="ignore"):
        log_sin = np.log(sin_t)
    out = np.zeros((x.size, alm_size(lmax)))

    log_seed = np.full(x.size, -0.5 * np.log(4 * np.pi))
    for m in range(lmax + 1):
        if m > 0:
            log_seed = log_seed + 0.5 * np.log((2 * m + 1) / (2 * m)) + log_sin
        scale = log_seed.copy()
        p_prev = np.zeros_like(x)
        p_cur = np.full_like(x, -1.0 if m % 2 else 1.0)
        start = alm_index(m, m, lmax)
        with np.errstate(under="ignore", invalid="ignore"):
            out[:, start] = np.where(np.isfinite(scale), p_cur * np.exp(scale), 0.0)
        for l in range(m + 1, lmax + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            p_prev, p_cur = p_cur, a * (x * p_cur - b * p_prev)
            big = np.abs(p_cur) > _RESCALE
            if np.any(big):
                p_cur = np.where(big, p_cur / _RESCALE, p_cur)
                p_prev = np.where(big, p_prev / _RESCALE, p_prev)
                scale = np.where(big, scale + _LOG_RESCALE, scale)
            with np.errstate(under="ignore", invalid="ignore"):
                out[:, start + l - m] = np.where(np.isfinite(scale),
                                                 p_cur * np.exp(scale), 0.0)
    return out


@lru_cache(maxsize=8)
def _plans(lmax, nlat):
    """Per-order blocks of the Legendre table on the grid latitudes."""
    table = legendre_table(lmax, _gauss_legendre(nlat)[0])
    starts = _layout(lmax)[2]
    blocks = []
    for m in range(lmax + 1):
        blk = np.ascontiguousarray(table[:, starts[m]:starts[m + 1]])
        blk.setflags(write=False)
        blocks.append(blk)
    return blocks


def _check_alm(alm, lmax):
    if alm.shape[-1] != alm_size(lmax):
        raise ConfigurationError(
            f"coefficient count {alm.shape[-1]} does not match lmax={lmax}")


def analysis(maps, grid):
    """Harmonic coefficients of real map(s) sampled on ``grid``.

    Exact (up to rounding) for fields band-limited to ``grid.lmax``.
    """
    maps = np.asarray(maps, dtype=float)
    if maps.shape[-2:] != grid.shape:
        raise ConfigurationError(f"map shape {maps.shape[-2:]} != grid {grid.shape}")
    lmax = grid.lmax
    starts = _layout(lmax)[2]
    four = np.fft.rfft(maps, axis=-1) * (2 * np.pi / grid.nlon)
    four = four * grid.lat_weights[:, None]
    out = np.zeros(maps.shape[:-2] + (alm_size(lmax),), dtype=complex)
    # real and imaginary parts separately: avoids promoting the real
    # Legendre blocks to complex at every call
    re, im = np.ascontiguousarray(four.real), np.ascontiguousarray(four.imag)
    for m, blk in enumerate(_plans(lmax, grid.nlat)):
        sl = slice(starts[m], starts[m + 1])
        out.real[..., sl] = re[..., :, m] @ blk
        out.imag[..., sl] = im[..., :, m] @ blk
    return out


def synthesis(alm, grid):
    """Real map(s) on ``grid`` from coefficients band-limited to ``grid.lmax``."""
    alm = np.asarray(alm, dtype=complex)
    lmax = lmax_from_size(alm.shape[-1])
    if lmax > grid.lmax:
        raise ConfigurationError(f"alm lmax={lmax} exceeds grid lmax={grid.lmax}")
    if lmax != grid.lmax:
        grid = GridSpec(lmax, grid.nlat, grid.nlon)
    starts = _layout(lmax)[2]
    four = np.zeros(alm.shape[:-1] + (grid.nlat, grid.nlon // 2 + 1), dtype=complex)
    re, im = np.ascontiguousarray(alm.real), np.ascontiguousarray(alm.imag)
    for m, blk in enumerate(_plans(lmax, grid.nlat)):
        sl = slice(starts[m], starts[m + 1])
        four.real[..., :, m] = re[..., sl] @ blk.T
        four.imag[..., :, m] = im[..., sl] @ blk.T
    return np.fft.irfft(four * grid.nlon, n=grid.nlon, axis=-1)


def convolve(alm, beam):
    """Isotropic convolution: multiply every (l, m) coefficient by beam[..., l].

    ``beam`` may carry leading axes that broadcast against those of ``alm``.
    """
    alm = np.asarray(alm)
    beam = np.asarray(beam, dtype=float)
    lmax = lmax_from_size(alm.shape[-1])
    if beam.shape[-1] != lmax + 1:
        raise ConfigurationError(f"beam length {beam.shape[-1]} != lmax+1={lmax + 1}")
    return alm * beam[..., alm_degrees(lmax)]


def power_spectrum(alm):
    """Angular power spectrum c[l] = (|a_l0|^2 + 2 sum_m |a_lm|^2) / (2l+1)."""
    alm = np.asarray(alm)
    lmax = lmax_from_size(alm.shape[-1])
    ell = alm_degrees(lmax)
    power = m_weights(lmax) * np.abs(alm) ** 2
    flat = power.reshape(-1, power.shape[-1])
    out = np.stack([np.bincount(ell, weights=row, minlength=lmax + 1) for row in flat])
    out = out.reshape(power.shape[:-1] + (lmax + 1,))
    return out / (2 * np.arange(lmax + 1) + 1)


def white_noise_alm(lmax, sigma_harmonic, rng_seed, size=None):
    """Gaussian white noise with expected power spectrum sigma_harmonic**2.

    The m = 0 coefficients are real N(0, sigma^2) draws; for m > 0 the real
    and imaginary parts are independent N(0, sigma^2 / 2).
    """
    if sigma_harmonic < 0:
        raise ConfigurationError("sigma_harmonic must be non-negative")
    rng = np.random.default_rng(rng_seed)
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (alm_size(lmax),)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    m0 = alm_orders(lmax) == 0
    out = np.where(m0, re, (re + 1j * im) / np.sqrt(2.0))
    return sigma_harmonic * out


def random_alm(lmax, rng, size=None, band_limit=None):
    """Random real-field coefficients with unit expected power per degree."""
    seed = rng.integers(2**63) if isinstance(rng, np.random.Generator) else rng
    alm = white_noise_alm(lmax, 1.0, seed, size)
    if band_limit is not None:
        alm[..., alm_degrees(lmax) > band_limit] = 0
    return alm
