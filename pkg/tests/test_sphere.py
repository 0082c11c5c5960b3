import numpy as np
import pytest
from scipy.special import sph_harm_y

from sdecgmca.errors import ConfigurationError
from sdecgmca.sphere import (GridSpec, alm_degrees, alm_dot, alm_index, alm_norm, alm_orders,
                             alm_size, analysis, convolve, legendre_table, lmax_from_size,
                             m_weights, power_spectrum, random_alm, synthesis,
                             white_noise_alm)

from conftest import rel_err


def direct_synthesis(alm, grid):
    """Brute-force sum of scipy spherical harmonics (real field, m >= 0 stored)."""
    lmax = lmax_from_size(alm.size)
    th, ph = np.meshgrid(grid.theta, grid.phi, indexing="ij")
    out = np.zeros(grid.shape)
    for l in range(lmax + 1):
        for m in range(l + 1):
            y = sph_harm_y(l, m, th, ph)
            term = alm[alm_index(l, m, lmax)] * y
            out += np.real(term) * (1.0 if m == 0 else 2.0)
    return out


def test_layout_sizes():
    assert alm_size(0) == 1
    assert alm_size(3) == 10
    assert lmax_from_size(10) == 3
    with pytest.raises(ConfigurationError):
        lmax_from_size(11)


def test_layout_index_consistent_with_degrees_and_orders():
    lmax = 7
    ell, em = alm_degrees(lmax), alm_orders(lmax)
    for l in range(lmax + 1):
        for m in range(l + 1):
            i = alm_index(l, m, lmax)
            assert (ell[i], em[i]) == (l, m)


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        GridSpec(8, 8, 18)
    with pytest.raises(ConfigurationError):
        GridSpec(8, 9, 16)
    g = GridSpec.default(8)
    assert g.shape == (9, 18)
    assert np.isclose(g.lat_weights.sum(), 2.0)
    assert np.isclose(g.pixel_weights.sum(), 4 * np.pi)
    assert np.all(np.diff(g.theta) > 0)


def test_legendre_table_matches_scipy():
    lmax = 20
    x = np.cos(np.linspace(0.05, np.pi - 0.05, 11))
    table = legendre_table(lmax, x)
    ell, em = alm_degrees(lmax), alm_orders(lmax)
    ref = np.real(sph_harm_y(ell[None, :], em[None, :], np.arccos(x)[:, None], 0.0))
    np.testing.assert_allclose(table, ref, atol=1e-12)


def test_legendre_table_high_degree_stays_finite():
    lmax = 300
    x = np.array([0.0, 0.5, 0.999999])
    table = legendre_table(lmax, x)
    assert np.all(np.isfinite(table))
    ell, em = alm_degrees(lmax), alm_orders(lmax)
    pick = np.array([alm_index(l, m, lmax) for l, m in [(300, 0), (300, 150), (250, 200), (300, 300)]])
    ref = np.real(sph_harm_y(ell[pick][None, :], em[pick][None, :], np.arccos(x)[:, None], 0.0))
    np.testing.assert_allclose(table[:, pick], ref, atol=1e-12)
    # normalized: int_{-1}^{1} P_lm^2 dx = 1 / (2 pi) per (l, m)
    g = GridSpec.default(60)
    t = legendre_table(60, g.cos_theta)
    np.testing.assert_allclose(g.lat_weights @ t ** 2, 1 / (2 * np.pi), rtol=1e-12)


def test_synthesis_matches_direct_sum(rng):
    lmax = 10
    grid = GridSpec.default(lmax)
    alm = random_alm(lmax, rng)
    np.testing.assert_allclose(synthesis(alm, grid), direct_synthesis(alm, grid), atol=1e-11)


def test_analysis_of_single_harmonic():
    lmax = 12
    grid = GridSpec.default(lmax)
    th, ph = np.meshgrid(grid.theta, grid.phi, indexing="ij")
    # real field 2 Re(Y_53) has coefficient 1 at (5, 3)
    field = 2 * np.real(sph_harm_y(5, 3, th, ph))
    alm = analysis(field, grid)
    expect = np.zeros(alm_size(lmax), dtype=complex)
    expect[alm_index(5, 3, lmax)] = 1.0
    np.testing.assert_allclose(alm, expect, atol=1e-12)


def test_round_trip_and_parseval(rng):
    for lmax in (16, 64):
        grid = GridSpec.default(lmax)
        alm = random_alm(lmax, rng, size=3)
        maps = synthesis(alm, grid)
        assert rel_err(analysis(maps, grid), alm) < 1e-11
        # Parseval against pixel quadrature
        pix = np.sum(grid.pixel_weights * maps ** 2, axis=(-2, -1))
        np.testing.assert_allclose(pix, alm_dot(alm, alm), rtol=1e-11)


def test_round_trip_on_oversampled_grid(rng):
    lmax = 9
    grid = GridSpec(lmax, 16, 40)
    alm = random_alm(lmax, rng)
    assert rel_err(analysis(synthesis(alm, grid), grid), alm) < 1e-12


def test_synthesis_of_lower_band_limit_on_larger_grid(rng):
    small = random_alm(5, rng)
    big = np.zeros(alm_size(9), dtype=complex)
    for l in range(6):
        for m in range(l + 1):
            big[alm_index(l, m, 9)] = small[alm_index(l, m, 5)]
    grid = GridSpec.default(9)
    np.testing.assert_allclose(synthesis(small, grid), synthesis(big, grid), atol=1e-13)


def test_shape_errors(rng):
    grid = GridSpec.default(8)
    with pytest.raises(ConfigurationError):
        analysis(np.zeros((5, 5)), grid)
    with pytest.raises(ConfigurationError):
        synthesis(random_alm(10, rng), grid)
    with pytest.raises(ConfigurationError):
        convolve(random_alm(8, rng), np.ones(5))


def test_m_weights_give_full_sum(rng):
    lmax = 6
    alm = random_alm(lmax, rng)
    full = 0.0
    for l in range(lmax + 1):
        for m in range(-l, l + 1):
            a = alm[alm_index(l, abs(m), lmax)]
            a = a if m >= 0 else (-1) ** m * np.conj(a)
            full += abs(a) ** 2
    assert np.isclose(alm_dot(alm, alm), full)
    assert np.isclose(alm_norm(alm) ** 2, full)
    assert set(np.unique(m_weights(lmax))) == {1.0, 2.0}


def test_convolve_is_diagonal_in_degree(rng):
    lmax = 8
    alm = random_alm(lmax, rng)
    beam = np.linspace(1.0, 0.1, lmax + 1)
    out = convolve(alm, beam)
    np.testing.assert_allclose(out, alm * beam[alm_degrees(lmax)])
    np.testing.assert_allclose(power_spectrum(out), power_spectrum(alm) * beam ** 2)


def test_convolve_matches_pixel_space_zonal_kernel(rng):
    # convolution with a zonal kernel K(cos gamma) = sum_l (2l+1)/(4 pi) b_l P_l
    lmax = 10
    grid = GridSpec(lmax, 24, 48)
    alm = random_alm(lmax, rng)
    beam = np.exp(-np.arange(lmax + 1) ** 2 / 30.0)
    field = synthesis(alm, grid)
    vals = synthesis(convolve(alm, beam), grid)
    for it, ip in [(3, 5), (10, 17), (20, 40)]:
        th0, ph0 = grid.theta[it], grid.phi[ip]
        th, ph = np.meshgrid(grid.theta, grid.phi, indexing="ij")
        cg = (np.cos(th0) * np.cos(th) + np.sin(th0) * np.sin(th) * np.cos(ph - ph0))
        kern = np.polynomial.legendre.legval(
            np.clip(cg, -1, 1), (2 * np.arange(lmax + 1) + 1) / (4 * np.pi) * beam)
        assert np.isclose(np.sum(grid.pixel_weights * kern * field), vals[it, ip], atol=1e-10)


def test_power_spectrum_of_single_degree():
    lmax = 4
    alm = np.zeros(alm_size(lmax), dtype=complex)
    alm[alm_index(2, 0, lmax)] = 1.0
    alm[alm_index(2, 1, lmax)] = 1.0j
    spec = power_spectrum(alm)
    np.testing.assert_allclose(spec, [0, 0, 3.0 / 5.0, 0, 0])


def test_white_noise_statistics():
    # Monte-Carlo: per-coefficient variance sigma^2 at every degree
    lmax, sigma = 24, 0.7
    noise = white_noise_alm(lmax, sigma, 5, size=400)
    spec = power_spectrum(noise).mean(axis=0)
    # each degree averages 400 (2l+1) chi-square draws
    tol = 5 * np.sqrt(2.0 / (400 * (2 * np.arange(lmax + 1) + 1)))
    assert np.all(np.abs(spec / sigma ** 2 - 1) < tol)
    m0 = alm_orders(lmax) == 0
    assert np.all(noise[..., m0].imag == 0)


def test_white_noise_deterministic_and_validated():
    a = white_noise_alm(8, 1.0, [3, 2])
    b = white_noise_alm(8, 1.0, [3, 2])
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ConfigurationError):
        white_noise_alm(8, -1.0, 0)


def test_random_alm_band_limit(rng):
    alm = random_alm(12, rng, band_limit=4)
    assert np.all(alm[alm_degrees(12) > 4] == 0)
    assert np.any(alm[alm_degrees(12) <= 4] != 0)
