import numpy as np
import pytest

from conftest import random_real_coeffs

from spherecam import convolution as cv
from spherecam import maskdesign as md
from spherecam import sphharm as sh
from spherecam.convolution import SpectralOperator, convolve_bruteforce, convolve_spectral


def random_mask_response(rng, L, n_bits=6):
    bits = tuple(int(b) for b in rng.integers(0, 2, size=n_bits))
    if not any(bits):
        bits = (1,) * n_bits
    alpha = float(rng.uniform(5.0, 60.0))
    return md.mask_to_response(md.BinaryMask(bits, alpha), L)


# ---------------------------------------------------------------------------
# SpectralOperator
# ---------------------------------------------------------------------------

def test_operator_validation():
    with pytest.raises(ValueError, match="does not match bandlimit"):
        SpectralOperator(4, np.ones(3))
    with pytest.raises(ValueError, match="finite"):
        SpectralOperator(2, np.array([1.0, np.inf]))


def test_operator_from_response_truncates():
    resp = md.open_aperture_response(30.0, 16)
    op = SpectralOperator.from_response(resp, 8)
    assert op.L == 8
    np.testing.assert_array_equal(op.scaling, resp.scaling_coeffs[:8])
    with pytest.raises(ValueError, match="scaling coefficients"):
        SpectralOperator.from_response(resp, 32)


# ---------------------------------------------------------------------------
# convolve_spectral
# ---------------------------------------------------------------------------

def test_spectral_identity_scaling():
    rng = np.random.default_rng(0)
    c = random_real_coeffs(8, rng)
    out = convolve_spectral(c, SpectralOperator(8, np.ones(8)))
    np.testing.assert_array_equal(out.table, c.table)


def test_spectral_constant_scene_full_sphere_kernel():
    # g == 1 collects the full sphere: a constant scene c becomes 4*pi*c
    thetas = np.linspace(0, np.pi, 1001)
    resp = md.response_from_profile(thetas, np.ones_like(thetas), 6)
    op = SpectralOperator.from_response(resp)
    grid = sh.make_grid(6)
    c_scene = 0.73
    f = sh.sht_forward(sh.SphericalSignal(grid, np.full(grid.shape, c_scene)))
    out = sh.sht_inverse(convolve_spectral(f, op), grid)
    np.testing.assert_allclose(out.values, 4 * np.pi * c_scene, rtol=1e-9)


def test_spectral_bandlimit_mismatch():
    c = sh.HarmonicCoeffs.zeros(8)
    with pytest.raises(ValueError, match="bandlimit mismatch"):
        convolve_spectral(c, SpectralOperator(6, np.ones(6)))


def test_spectral_linearity():
    rng = np.random.default_rng(3)
    a = random_real_coeffs(6, rng)
    b = random_real_coeffs(6, rng)
    op = SpectralOperator(6, rng.uniform(0.1, 1.0, 6))
    lhs = convolve_spectral(sh.HarmonicCoeffs(6, 2.0 * a.table + 3.0 * b.table), op)
    rhs = 2.0 * convolve_spectral(a, op).table + 3.0 * convolve_spectral(b, op).table
    np.testing.assert_allclose(lhs.table, rhs, atol=1e-14)


# ---------------------------------------------------------------------------
# convolve_bruteforce
# ---------------------------------------------------------------------------

def test_bruteforce_constant_scene_equals_throughput():
    # bandlimited kernel evaluation makes the quadrature exact
    grid = sh.make_grid(24)
    c = 1.7
    f = sh.SphericalSignal(grid, np.full(grid.shape, c))
    resp = md.open_aperture_response(20.0, 24)
    out = convolve_bruteforce(f, resp, grid.directions()[::157], bandlimit=24)
    np.testing.assert_allclose(out, c * md.light_throughput(resp), rtol=1e-9)


def test_bruteforce_constant_scene_raw_profile_wide_kernel():
    # raw tabulated kernels are alias-limited; wide, well-resolved kernels
    # land within ~1% of the closed form
    grid = sh.make_grid(48)
    f = sh.SphericalSignal(grid, np.full(grid.shape, 2.0))
    resp = md.open_aperture_response(40.0, 48)
    out = convolve_bruteforce(f, resp, grid.directions()[::401])
    np.testing.assert_allclose(out, 2.0 * md.light_throughput(resp), rtol=0.03)


def test_bruteforce_pinhole_approximates_scene():
    # tiny aperture: normalized output approaches the scene pointwise
    grid = sh.make_grid(64)
    rng = np.random.default_rng(4)
    f = sh.sht_inverse(random_real_coeffs(6, rng), grid)
    resp = md.open_aperture_response(2.0, 64)
    pick = slice(5000, 5010)
    out = convolve_bruteforce(f, resp, grid.directions()[pick], bandlimit=64)
    out /= md.light_throughput(resp)
    truth = f.values.reshape(-1)[pick]
    assert np.max(np.abs(out - truth)) / np.max(np.abs(truth)) < 0.02


def test_bruteforce_matches_spectral_on_full_grid():
    # both paths on a grid with bandlimit headroom (|fg| has twice the band)
    Lf = 8
    grid = sh.make_grid(2 * Lf)
    rng = np.random.default_rng(5)
    c = random_real_coeffs(Lf, rng)
    f = sh.sht_inverse(c, grid)
    resp = random_mask_response(rng, Lf)
    spec = sh.sht_inverse(
        convolve_spectral(c, SpectralOperator.from_response(resp, Lf)), grid
    ).values.reshape(-1)
    brute = convolve_bruteforce(f, resp, grid.directions(), bandlimit=Lf)
    assert np.max(np.abs(brute - spec)) < 1e-6


@pytest.mark.parametrize("Lf", [4, 8, 16])
def test_convolution_theorem_seeded_trials(Lf):
    grid = sh.make_grid(2 * Lf)
    for trial in range(5):
        rng = np.random.default_rng(900 + 10 * Lf + trial)
        c = random_real_coeffs(Lf, rng)
        f = sh.sht_inverse(c, grid)
        resp = random_mask_response(rng, Lf)
        spec = sh.sht_inverse(
            convolve_spectral(c, SpectralOperator.from_response(resp, Lf)), grid
        ).values.reshape(-1)
        brute = convolve_bruteforce(f, resp, grid.directions(), bandlimit=Lf)
        assert np.max(np.abs(brute - spec)) < 1e-6


def test_bruteforce_linear_in_scene_homogeneous_in_kernel():
    grid = sh.make_grid(12)
    rng = np.random.default_rng(6)
    f1 = sh.sht_inverse(random_real_coeffs(6, rng), grid)
    f2 = sh.sht_inverse(random_real_coeffs(6, rng), grid)
    resp = md.open_aperture_response(25.0, 12)
    orients = grid.directions()[::31]
    a1 = convolve_bruteforce(f1, resp, orients)
    a2 = convolve_bruteforce(f2, resp, orients)
    mix = sh.SphericalSignal(grid, 0.5 * f1.values - 2.0 * f2.values)
    np.testing.assert_allclose(
        convolve_bruteforce(mix, resp, orients), 0.5 * a1 - 2.0 * a2, atol=1e-12
    )
    scaled = md.AngularResponse(
        resp.thetas, 3.0 * resp.profile, 3.0 * resp.zonal_coeffs, 3.0 * resp.scaling_coeffs
    )
    np.testing.assert_allclose(
        convolve_bruteforce(f1, scaled, orients), 3.0 * a1, rtol=1e-12
    )


def test_azimuthal_symmetry_zonal_scene():
    # zonal scene + zonal kernel: measurements depend only on the
    # orientation's colatitude, never its azimuth
    L = 12
    grid = sh.make_grid(L)
    rng = np.random.default_rng(7)
    c = sh.HarmonicCoeffs.zeros(L)
    for l in range(L):
        c.set_coeff(l, 0, rng.standard_normal())
    f = sh.sht_inverse(c, grid)
    resp = md.open_aperture_response(30.0, L)
    theta = 1.1
    orients = np.array([[theta, 0.3], [theta, 2.9], [theta, 5.5]])
    out = convolve_bruteforce(f, resp, orients, bandlimit=L)
    assert np.max(np.abs(out - out[0])) < 1e-12


def test_orientation_validation():
    grid = sh.make_grid(4)
    f = sh.SphericalSignal(grid, np.zeros(grid.shape))
    resp = md.open_aperture_response(30.0, 4)
    with pytest.raises(ValueError, match="not unit-norm"):
        convolve_bruteforce(f, resp, np.array([[0.0, 0.0, 1.1]]))
    with pytest.raises(ValueError, match="orientations must be"):
        convolve_bruteforce(f, resp, np.zeros((2, 4)))


def test_orientation_theta_phi_pairs_match_vectors():
    grid = sh.make_grid(8)
    rng = np.random.default_rng(8)
    f = sh.sht_inverse(random_real_coeffs(4, rng), grid)
    resp = md.open_aperture_response(45.0, 8)
    tp = np.array([[0.4, 1.0], [2.0, 4.0]])
    vec = np.stack(
        [np.sin(tp[:, 0]) * np.cos(tp[:, 1]), np.sin(tp[:, 0]) * np.sin(tp[:, 1]), np.cos(tp[:, 0])],
        axis=1,
    )
    np.testing.assert_allclose(
        convolve_bruteforce(f, resp, tp), convolve_bruteforce(f, resp, vec), atol=1e-13
    )
