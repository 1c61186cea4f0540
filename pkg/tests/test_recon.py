"""Reconstruction: spectral filters, TV machinery, MFISTA, quality metric."""

import numpy as np
import pytest

from conftest import random_real_coeffs, random_real_signal

from spherecam import forwardsim as fs
from spherecam import maskdesign as md
from spherecam import recon
from spherecam import sphharm
from spherecam.convolution import SpectralOperator
from spherecam.operators import SpectralConvOperator


def mask_operator(L, gain=1.0, rows=None):
    resp = md.mask_to_response(md.BinaryMask((1, 1, 1, 1, 1, 0, 0, 0, 0, 0), 10.0), L)
    return resp, SpectralConvOperator(sphharm.make_grid(L), resp.scaling_coeffs, rows, gain)


# ---------------------------------------------------------------------------
# Direct and Wiener inversion
# ---------------------------------------------------------------------------

def test_direct_inversion_roundtrip():
    L = 8
    rng = np.random.default_rng(0)
    f = random_real_coeffs(L, rng)
    resp = md.open_aperture_response(25.0, L)
    op = SpectralOperator(L, resp.scaling_coeffs)
    y = sphharm.HarmonicCoeffs(L, f.table * op.scaling[:, None])
    back = recon.invert_direct(y, op)
    np.testing.assert_allclose(back.table, f.table, atol=1e-12)


def test_direct_inversion_names_dead_degree():
    L = 6
    scaling = np.array([1.0, 0.5, 0.0, 0.2, 0.1, 0.05])
    op = SpectralOperator(L, scaling)
    y = sphharm.HarmonicCoeffs.zeros(L)
    with pytest.raises(ValueError, match="l=2"):
        recon.invert_direct(y, op)


def test_direct_inversion_bandlimit_mismatch():
    resp = md.open_aperture_response(25.0, 8)
    op = SpectralOperator(8, resp.scaling_coeffs)
    with pytest.raises(ValueError, match="bandlimit"):
        recon.invert_direct(sphharm.HarmonicCoeffs.zeros(6), op)


def test_wiener_approaches_direct_at_high_prior():
    L = 8
    rng = np.random.default_rng(1)
    f = random_real_coeffs(L, rng)
    resp = md.open_aperture_response(25.0, L)
    op = SpectralOperator(L, resp.scaling_coeffs)
    y = sphharm.HarmonicCoeffs(L, f.table * op.scaling[:, None])
    w = recon.wiener(y, op, snr_prior=1e14)
    d = recon.invert_direct(y, op)
    np.testing.assert_allclose(w.table, d.table, rtol=1e-6)


def test_wiener_shrinks_relative_to_direct():
    L = 8
    rng = np.random.default_rng(2)
    y = random_real_coeffs(L, rng)
    resp = md.open_aperture_response(25.0, L)
    op = SpectralOperator(L, resp.scaling_coeffs)
    w = recon.wiener(y, op, snr_prior=10.0)
    d = recon.invert_direct(y, op)
    assert np.all(np.abs(w.table) <= np.abs(d.table) + 1e-15)


def test_wiener_validation():
    L = 4
    resp = md.open_aperture_response(25.0, L)
    op = SpectralOperator(L, resp.scaling_coeffs)
    with pytest.raises(ValueError, match="snr_prior"):
        recon.wiener(sphharm.HarmonicCoeffs.zeros(L), op, snr_prior=0.0)
    with pytest.raises(ValueError, match="bandlimit"):
        recon.wiener(sphharm.HarmonicCoeffs.zeros(6), op, snr_prior=1.0)


def test_wiener_sweep_beats_direct_on_noisy_data():
    # With sensor noise present, some finite prior must outperform plain
    # division by ghat_l, which amplifies the weakly-observed degrees.
    L = 36
    rng = np.random.default_rng(3)
    sig = random_real_signal(L, rng)
    scene = sphharm.SphericalSignal(sig.grid, sig.values - sig.values.min() + 0.2)
    resp, _ = mask_operator(L)
    m = fs.simulate(scene, resp, fs.full_grid_layout(scene.grid), fs.SensorSpec(), 0.4, seed=5)
    meas = sphharm.SphericalSignal(scene.grid, m.values.reshape(scene.grid.shape) / m.gain)
    y = sphharm.sht_forward(meas)
    op = SpectralOperator(L, resp.scaling_coeffs)
    snr_direct = recon.snr_i(sphharm.sht_inverse(recon.invert_direct(y, op)), scene)
    snr_best = max(
        recon.snr_i(sphharm.sht_inverse(recon.wiener(y, op, prior)), scene)
        for prior in np.logspace(0, 9, 10)
    )
    assert snr_best > snr_direct


# ---------------------------------------------------------------------------
# Total variation
# ---------------------------------------------------------------------------

def test_tv_constant_is_zero():
    grid = sphharm.make_grid(8)
    f = sphharm.SphericalSignal(grid, np.full(grid.shape, 3.7))
    assert recon.tv_isotropic(f) == 0.0


def test_tv_positive_homogeneity():
    grid = sphharm.make_grid(8)
    rng = np.random.default_rng(4)
    v = rng.standard_normal(grid.shape)
    base = recon.tv_isotropic(sphharm.SphericalSignal(grid, v))
    assert recon.tv_isotropic(sphharm.SphericalSignal(grid, -2.5 * v)) == pytest.approx(
        2.5 * base, rel=1e-12)
    assert base > 0.0


def test_tv_zonal_step_matches_hand_count():
    # f = 1 above row t0, 0 from t0 on: the only nonzero difference is the
    # theta drop of size 1 at row t0-1, once per azimuth column.
    L = 16
    grid = sphharm.make_grid(L)
    t0 = 9
    v = np.zeros(grid.shape)
    v[:t0] = 1.0
    expected = grid.weights[t0 - 1] * grid.n_phi
    assert recon.tv_isotropic(sphharm.SphericalSignal(grid, v)) == pytest.approx(
        expected, rel=1e-12)


def test_tv_rejects_complex():
    grid = sphharm.make_grid(4)
    with pytest.raises(ValueError, match="real"):
        recon.tv_isotropic(sphharm.SphericalSignal(grid, np.ones(grid.shape, complex)))


def test_tv_prox_zero_tau_is_projection():
    grid = sphharm.make_grid(8)
    rng = np.random.default_rng(5)
    z = rng.standard_normal(grid.shape)
    out, _ = recon.tv_prox(z, 0.0, grid.weights, nonneg=False, n_iters=5)
    np.testing.assert_array_equal(out, z)
    out, _ = recon.tv_prox(z, 0.0, grid.weights, nonneg=True, n_iters=5)
    np.testing.assert_array_equal(out, np.maximum(z, 0.0))


def test_tv_prox_improves_prox_objective():
    grid = sphharm.make_grid(8)
    rng = np.random.default_rng(6)
    z = rng.standard_normal(grid.shape)
    tau = 0.05

    def prox_obj(u):
        return 0.5 * np.sum((u - z) ** 2) + tau * recon.tv_isotropic(
            sphharm.SphericalSignal(grid, u))

    out, dual = recon.tv_prox(z, tau, grid.weights, nonneg=False, n_iters=60)
    assert prox_obj(out) < prox_obj(z)
    # warm-started re-solve does not undo the solution
    out2, _ = recon.tv_prox(z, tau, grid.weights, nonneg=False, n_iters=60, warm=dual)
    assert prox_obj(out2) <= prox_obj(out) + 1e-10


def test_tv_prox_nonneg_output():
    grid = sphharm.make_grid(8)
    rng = np.random.default_rng(7)
    z = rng.standard_normal(grid.shape) - 0.5
    out, _ = recon.tv_prox(z, 0.1, grid.weights, nonneg=True, n_iters=40)
    assert out.min() >= 0.0


def test_tv_prox_constant_fixed_point():
    grid = sphharm.make_grid(8)
    z = np.full(grid.shape, 2.0)
    out, _ = recon.tv_prox(z, 0.3, grid.weights, nonneg=True, n_iters=40)
    np.testing.assert_allclose(out, z, atol=1e-12)


# ---------------------------------------------------------------------------
# MFISTA
# ---------------------------------------------------------------------------

def test_mfista_matches_direct_inversion_noiseless():
    L = 8
    rng = np.random.default_rng(8)
    sig = random_real_signal(L, rng)
    truth = sphharm.SphericalSignal(sig.grid, sig.values - sig.values.min() + 0.1)
    resp, op = mask_operator(L)
    y = op.forward(truth.values)
    cfg = recon.ReconConfig(lambda_tv=0.0, max_iters=1000, rel_tol=1e-14)
    out = recon.mfista_tv(y, op, cfg)
    spec = SpectralOperator(L, resp.scaling_coeffs)
    direct = sphharm.sht_inverse(
        recon.invert_direct(sphharm.sht_forward(sphharm.SphericalSignal(truth.grid,
                                                                        y.reshape(truth.grid.shape))),
                            spec))
    assert np.abs(out.values - direct.values).max() < 1e-6


def test_mfista_objective_monotone_on_noisy_problem():
    L = 8
    rng = np.random.default_rng(9)
    sig = random_real_signal(L, rng)
    truth = sphharm.SphericalSignal(sig.grid, sig.values - sig.values.min() + 0.1)
    resp, op = mask_operator(L, gain=0.5)
    y = op.forward(truth.values) + 0.01 * rng.standard_normal(op.n_out)
    out, info = recon.mfista_tv(y, op, recon.ReconConfig(lambda_tv=1e-3, max_iters=120),
                                return_info=True)
    diffs = np.diff(info.objectives)
    assert np.all(diffs <= 0.0)
    assert info.final_objective == info.objectives[-1]
    assert len(info.objectives) == info.iterations + 1


def test_mfista_gradient_matches_finite_differences():
    L = 8
    rng = np.random.default_rng(10)
    _, op = mask_operator(L, gain=0.7)
    f = rng.random(op.grid.shape)
    y = rng.random(op.n_out)

    def data_term(u):
        r = op.forward(u) - y
        return float(np.dot(r, r))

    grad = 2.0 * op.adjoint(op.forward(f) - y)
    eps = 1e-5
    idx = [(int(i), int(j)) for i, j in
           zip(rng.integers(0, op.grid.L, 10), rng.integers(0, op.grid.n_phi, 10))]
    for i, j in idx:
        fp = f.copy(); fp[i, j] += eps
        fm = f.copy(); fm[i, j] -= eps
        fd = (data_term(fp) - data_term(fm)) / (2.0 * eps)
        assert abs(fd - grad[i, j]) <= 1e-5 * max(1.0, abs(fd))


def test_mfista_huge_lambda_flattens_output():
    L = 8
    rng = np.random.default_rng(11)
    sig = random_real_signal(L, rng)
    truth = sphharm.SphericalSignal(sig.grid, sig.values - sig.values.min() + 0.1)
    _, op = mask_operator(L)
    y = op.forward(truth.values)
    lam = 1e6 * float(np.dot(y, y))
    cfg = recon.ReconConfig(lambda_tv=lam, max_iters=300, tv_inner_iters=50)
    out = recon.mfista_tv(y, op, cfg)
    assert np.var(out.values) < 1e-6 * np.var(truth.values)


def test_mfista_accepts_measurement_set():
    L = 8
    rng = np.random.default_rng(12)
    sig = random_real_signal(L, rng)
    scene = sphharm.SphericalSignal(sig.grid, sig.values - sig.values.min() + 0.1)
    resp = md.open_aperture_response(20.0, L)
    m = fs.simulate(scene, resp, fs.full_grid_layout(scene.grid), fs.SensorSpec(), 0.5, seed=1)
    op = SpectralConvOperator(scene.grid, resp.scaling_coeffs, None, m.gain)
    cfg = recon.ReconConfig(lambda_tv=1e-4, max_iters=50)
    a = recon.mfista_tv(m, op, cfg)
    b = recon.mfista_tv(m.values, op, cfg)
    np.testing.assert_array_equal(a.values, b.values)


def test_mfista_nonneg_constraint():
    L = 8
    rng = np.random.default_rng(13)
    _, op = mask_operator(L)
    y = rng.standard_normal(op.n_out)  # inconsistent data pushes negatives
    out = recon.mfista_tv(y, op, recon.ReconConfig(lambda_tv=1e-4, max_iters=60))
    assert out.values.min() >= 0.0


def test_mfista_measurement_length_mismatch():
    L = 8
    _, op = mask_operator(L)
    with pytest.raises(ValueError, match="measurement count"):
        recon.mfista_tv(np.zeros(op.n_out - 1), op, recon.ReconConfig())


def test_mfista_rejects_inconsistent_step():
    L = 8
    rng = np.random.default_rng(14)
    _, op = mask_operator(L)
    y = op.forward(rng.random(op.grid.shape))
    cfg = recon.ReconConfig(max_iters=200, step=1e12, nonneg=False)
    with pytest.raises(RuntimeError, match="step"):
        recon.mfista_tv(y, op, cfg)


def test_mfista_explicit_step_matches_auto():
    L = 8
    rng = np.random.default_rng(15)
    _, op = mask_operator(L)
    y = op.forward(rng.random(op.grid.shape))
    auto_out, info = recon.mfista_tv(y, op, recon.ReconConfig(max_iters=80), return_info=True)
    fixed_out = recon.mfista_tv(y, op, recon.ReconConfig(max_iters=80, step=info.step))
    np.testing.assert_array_equal(auto_out.values, fixed_out.values)


def test_mfista_converged_flag_on_long_run():
    L = 4
    rng = np.random.default_rng(16)
    _, op = mask_operator(L)
    y = op.forward(rng.random(op.grid.shape))
    _, info = recon.mfista_tv(y, op, recon.ReconConfig(max_iters=5000, rel_tol=1e-10),
                              return_info=True)
    assert info.converged
    assert info.iterations < 5000


def test_mfista_subset_rows_reconstructs():
    # 100 of 120 samples (still more than the 64 unknowns) give a close fit
    L = 8
    rng = np.random.default_rng(17)
    sig = random_real_signal(L, rng)
    truth = sphharm.SphericalSignal(sig.grid, sig.values - sig.values.min() + 0.2)
    rows = np.sort(rng.choice(truth.grid.n_samples, 100, replace=False))
    _, op = mask_operator(L, rows=rows)
    y = op.forward(truth.values)
    out = recon.mfista_tv(y, op, recon.ReconConfig(lambda_tv=1e-6, max_iters=800,
                                                   rel_tol=1e-14))
    assert recon.snr_i(out, truth) > 25.0


@pytest.mark.parametrize("kwargs", [
    {"lambda_tv": -1.0}, {"max_iters": 0}, {"tv_inner_iters": 0},
    {"step": 0.0}, {"step": -2.0}, {"wiener_snr_prior": 0.0},
])
def test_recon_config_validation(kwargs):
    with pytest.raises(ValueError):
        recon.ReconConfig(**kwargs)


# ---------------------------------------------------------------------------
# SNR metric
# ---------------------------------------------------------------------------

def test_snr_exact_recovery_is_infinite():
    grid = sphharm.make_grid(8)
    f = sphharm.SphericalSignal(grid, np.random.default_rng(18).random(grid.shape))
    assert recon.snr_i(f, f) == np.inf


def test_snr_zero_estimate_is_zero_db():
    grid = sphharm.make_grid(8)
    truth = sphharm.SphericalSignal(grid, np.random.default_rng(19).random(grid.shape))
    zero = sphharm.SphericalSignal(grid, np.zeros(grid.shape))
    assert recon.snr_i(zero, truth) == pytest.approx(0.0, abs=1e-12)


def test_snr_scales_with_relative_error():
    grid = sphharm.make_grid(8)
    truth = sphharm.SphericalSignal(grid, np.random.default_rng(20).random(grid.shape) + 1.0)
    est = sphharm.SphericalSignal(grid, truth.values * 1.01)  # 1% error -> 40 dB
    assert recon.snr_i(est, truth) == pytest.approx(40.0, abs=1e-9)


def test_snr_validation():
    g8, g4 = sphharm.make_grid(8), sphharm.make_grid(4)
    zero8 = sphharm.SphericalSignal(g8, np.zeros(g8.shape))
    with pytest.raises(ValueError, match="zero"):
        recon.snr_i(zero8, zero8)
    with pytest.raises(ValueError, match="grid mismatch"):
        recon.snr_i(sphharm.SphericalSignal(g4, np.zeros(g4.shape)),
                    sphharm.SphericalSignal(g8, np.ones(g8.shape)))
