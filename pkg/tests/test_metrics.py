import itertools

import numpy as np
import pytest

from sdecgmca.metrics import DB_CAP, Alignment, align, ca_db, degrade_to_worst, nmse_db
from sdecgmca.simulate import SceneConfig, make_beams, normalize_columns
from sdecgmca.sphere import (GridSpec, alm_norm, analysis, convolve, power_spectrum, random_alm,
                             synthesis)


def perturb_to_ratio(truth, ratio, rng):
    d = random_alm(8, rng, size=truth.shape[0])
    return truth + d * (ratio * alm_norm(truth) / alm_norm(d))


def test_nmse_fixtures(rng):
    s = random_alm(8, rng, size=3)
    ones = np.ones(9)
    assert nmse_db(s, s, ones) == DB_CAP
    assert nmse_db(np.zeros_like(s), s, ones) == 0.0
    for target in (24.79, 20.0, 3.0):
        est = perturb_to_ratio(s, 10 ** (-target / 20), rng)
        assert np.isclose(nmse_db(est, s, ones), target, atol=1e-10)
    with pytest.raises(ValueError):
        nmse_db(s, np.zeros_like(s), ones)


def test_nmse_uses_reference_beam(rng):
    s = random_alm(8, rng, size=2)
    beam = np.linspace(1, 0.2, 9)
    assert nmse_db(convolve(s, beam), s, beam) == DB_CAP


def test_nmse_monotone_in_noise(rng):
    s = random_alm(8, rng, size=2)
    d = random_alm(8, rng, size=2)
    vals = [nmse_db(s + t * d, s, np.ones(9)) for t in (1e-3, 1e-2, 1e-1, 1.0)]
    assert np.all(np.diff(vals) < 0)


def test_ca_fixtures(rng):
    a = normalize_columns(rng.standard_normal((6, 3)))
    assert ca_db(a, a) == DB_CAP
    perm = a[:, [2, 0, 1]] * np.array([1, -1, 1])
    assert ca_db(perm, a) == DB_CAP
    # mean |pinv(A) A* - I| = 1e-2 -> 20 dB; build A* = A (I + D)
    d = np.full((3, 3), 1e-2)
    a_true = a @ (np.eye(3) + d)
    assert np.isclose(ca_db(a, a_true, Alignment((0, 1, 2), (1, 1, 1))), 20.0, atol=1e-10)
    with pytest.raises(ValueError):
        ca_db(np.column_stack([a[:, :2], a[:, 0]]), a, Alignment((0, 1, 2), (1, 1, 1)))


def test_align_identity_and_swap(rng):
    a = normalize_columns(rng.standard_normal((8, 4)))
    al = align(a, a)
    assert al.perm == (0, 1, 2, 3) and al.signs == (1, 1, 1, 1)
    est = a[:, [1, 0, 2, 3]] * np.array([1, 1, -1, 1])
    al = align(est, a)
    assert al.perm == (1, 0, 2, 3) and al.signs == (1, 1, -1, 1)
    np.testing.assert_allclose(al.apply_columns(est), a)


def test_align_matches_brute_force(rng):
    for _ in range(20):
        a_true = normalize_columns(rng.standard_normal((8, 4)))
        a_est = normalize_columns(a_true + 0.6 * rng.standard_normal((8, 4)))
        corr = np.abs(a_true.T @ a_est)
        best = max(itertools.permutations(range(4)),
                   key=lambda p: corr[np.arange(4), list(p)].sum())
        assert align(a_est, a_true).perm == best


def test_align_greedy_above_six(rng):
    a = normalize_columns(rng.standard_normal((10, 8)))
    p = rng.permutation(8)
    al = align(a[:, p], a)
    np.testing.assert_allclose(al.apply_columns(a[:, p]), a)


def test_nmse_invariant_to_permutation_and_sign(rng):
    a = normalize_columns(rng.standard_normal((6, 3)))
    s = random_alm(8, rng, size=3)
    est = s + 0.05 * random_alm(8, rng, size=3)
    ref = nmse_db(est, s, np.ones(9))
    p, sg = [2, 0, 1], np.array([-1, 1, -1])
    al = align(a[:, p] * sg, a)
    val = nmse_db(est[p] * sg[:, None], s, np.ones(9), al)
    assert abs(val - ref) < 1e-12


def test_degrade_identity_and_ladder(rng):
    s = random_alm(16, rng, size=2)
    same = np.ones((3, 17))
    np.testing.assert_array_equal(degrade_to_worst(s, same), s)
    beams, _ = make_beams(SceneConfig(lmax=16, n_sources=2, n_channels=3))
    out = degrade_to_worst(s, beams)
    np.testing.assert_allclose(power_spectrum(out),
                               power_spectrum(s) * (beams[0] / beams[2]) ** 2, rtol=1e-12)
    with pytest.raises(ValueError):
        degrade_to_worst(s, np.zeros((2, 17)))


def test_degrade_matches_pixel_domain(rng):
    # the worst/best transfer ratio applied by pixel-space convolution with
    # its zonal kernel
    lmax = 16
    grid = GridSpec(lmax, 24, 48)
    beams, _ = make_beams(SceneConfig(lmax=lmax, n_sources=2, n_channels=3))
    s = random_alm(lmax, rng, size=1)
    out = synthesis(degrade_to_worst(s, beams), grid)[0]
    ratio = beams[0] / beams[2]
    coef = (2 * np.arange(lmax + 1) + 1) / (4 * np.pi) * ratio
    field = synthesis(s, grid)[0]
    th, ph = np.meshgrid(grid.theta, grid.phi, indexing="ij")
    for it, ip in [(2, 3), (12, 30), (22, 47)]:
        cg = (np.cos(grid.theta[it]) * np.cos(th)
              + np.sin(grid.theta[it]) * np.sin(th) * np.cos(ph - grid.phi[ip]))
        kern = np.polynomial.legendre.legval(np.clip(cg, -1, 1), coef)
        val = np.sum(grid.pixel_weights * kern * field)
        assert abs(val - out[it, ip]) < 1e-8 * np.abs(out).max()
    np.testing.assert_allclose(analysis(out, grid), degrade_to_worst(s, beams)[0], atol=1e-12)
