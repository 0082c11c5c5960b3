"""
Isotropic undecimated starlet frame on the sphere, built as a harmonic
filter bank with reconstruction by plain summation of the scales.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .sphere import analysis, convolve, lmax_from_size, synthesis


def b3spline(x):
    """Cubic B-spline, supported on [-2, 2], B3(0) = 2/3."""
    x = np.asarray(x, dtype=float)
    val = (np.abs(x - 2) ** 3 - 4 * np.abs(x - 1) ** 3 + 6 * np.abs(x) ** 3
           - 4 * np.abs(x + 1) ** 3 + np.abs(x + 2) ** 3) / 12.0
    return np.where(np.abs(x) < 2, val, 0.0)


def scaling_profile(ell, cutoff):
    """Low-pass equal to 1 below cutoff/2, B3 taper to exactly 0 at cutoff."""
    ell = np.asarray(ell, dtype=float)
    half = 0.5 * cutoff
    x = np.clip(2.0 * (ell - half) / half, 0.0, 2.0)
    return 1.5 * b3spline(x)


def default_nscales(lmax):
    if lmax >= 32:
        return 4
    return max(1, int(np.floor(np.log2(max(lmax, 2)))) - 1)


@dataclass(frozen=True)
class StarletBank:
    """``filters[j]`` for j < nscales is the wavelet band psi_{j+1};
    ``filters[nscales]`` is the coarse low-pass phi_J."""

    lmax: int
    nscales: int
    filters: np.ndarray

    @property
    def wavelet_filters(self):
        return self.filters[:-1]

    @property
    def coarse_filter(self):
        return self.filters[-1]


def build_bank(lmax, nscales=None):
    """Starlet filter bank whose J + 1 filters sum to one at every degree.

    phi_0 is the identity, phi_j (j >= 1) has cutoff ``lmax / 2**j`` and the
    wavelet bands are the differences ``psi_j = phi_{j-1} - phi_j``.
    """
    if nscales is None:
        nscales = default_nscales(lmax)
    if nscales < 1:
        raise ConfigurationError("nscales must be >= 1")
    if 2 ** nscales > lmax:
        raise ConfigurationError(
            f"nscales={nscales} too large for lmax={lmax} (need 2**nscales <= lmax)")
    ell = np.arange(lmax + 1)
    phi = [np.ones(lmax + 1)]
    for j in range(1, nscales + 1):
        phi.append(scaling_profile(ell, lmax / 2 ** j))
    bands = [phi[j - 1] - phi[j] for j in range(1, nscales + 1)]
    filters = np.stack(bands + [phi[-1]])
    filters.setflags(write=False)
    return StarletBank(lmax, nscales, filters)


def starlet_analysis_alm(alm, grid, bank):
    """Starlet scales of field(s) given by harmonic coefficients.

    Returns an array of shape (..., nscales + 1, nlat, nlon); the last scale
    is the coarse approximation.
    """
    alm = np.asarray(alm)
    if lmax_from_size(alm.shape[-1]) != bank.lmax:
        raise ConfigurationError("alm and starlet bank disagree on lmax")
    return synthesis(convolve(alm[..., None, :], bank.filters), grid)


def starlet_analysis(maps, grid, bank):
    return starlet_analysis_alm(analysis(maps, grid), grid, bank)


def starlet_synthesis(coeffs):
    """First-generation reconstruction: pointwise sum over scales."""
    return np.sum(coeffs, axis=-3)
