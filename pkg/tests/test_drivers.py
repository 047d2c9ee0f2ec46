"""Grids, Gaussian driver sampling, Cameron-Martin controls, serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from roughflow import (
    CameronMartinControl,
    HurstParam,
    ParameterError,
    TimeGrid,
    cm_norm,
    cm_to_path,
    read_control_csv,
    read_path_csv,
    sample_bm,
    sample_fbm,
    sample_mixed,
    volterra_kernel,
    write_control_csv,
    write_path_csv,
    zero_control,
)
from roughflow.drivers import rng_for

# Brute-force quadrature of int_0^1 K_{0.4}(1, s) ds, frozen before the build
# (10^6-point adaptive quadrature with the r = s + (1-s)x substitution).
VOLTERRA_INTEGRAL_H04 = 0.99486845457586152745


# ---------------------------------------------------------------------------
# TimeGrid / HurstParam
# ---------------------------------------------------------------------------


def test_grid_points_uniform():
    g = TimeGrid(2.0, 8)
    assert g.points[0] == 0.0 and g.points[-1] == 2.0
    assert np.allclose(np.diff(g.points), g.h)


def test_grid_rejects_non_power_of_two():
    with pytest.raises(ParameterError):
        TimeGrid(1.0, 3)
    with pytest.raises(ParameterError):
        TimeGrid(-1.0, 4)


def test_grid_refine_coarsen_roundtrip():
    g = TimeGrid(1.0, 64)
    assert g.refined(4).coarsened(4) == g
    with pytest.raises(ParameterError):
        g.coarsened(3)


def test_hurst_param_bounds():
    hp = HurstParam(0.4)
    assert 1 / 3 < hp.beta < hp.alpha < hp.H
    assert HurstParam(0.5).is_brownian_oracle
    with pytest.raises(ParameterError):
        HurstParam(0.3)
    with pytest.raises(ParameterError):
        HurstParam(0.6)
    with pytest.raises(ParameterError):
        HurstParam(0.4, alpha=0.45)


# ---------------------------------------------------------------------------
# Brownian sampling
# ---------------------------------------------------------------------------


def test_bm_single_increment_unit_variance():
    g = TimeGrid(1.0, 1)
    vals = np.array([sample_bm(g, 50, s)[1] for s in range(200)]).ravel()  # 1e4 draws
    n = vals.size
    se = np.sqrt(2.0 / n)  # SE of the sample variance of N(0,1)
    assert abs(vals.var() - 1.0) < 3 * se


def test_bm_seed_determinism():
    g = TimeGrid(1.0, 32)
    assert np.array_equal(sample_bm(g, 2, 9), sample_bm(g, 2, 9))


def test_bm_quadratic_variation():
    g = TimeGrid(1.0, 2**14)
    w = sample_bm(g, 1, 3)
    qv = np.sum(np.diff(w[:, 0]) ** 2)
    assert abs(qv - 1.0) < 0.05


def test_bm_rejects_zero_dim():
    with pytest.raises(ParameterError):
        sample_bm(TimeGrid(1.0, 4), 0, 1)


# ---------------------------------------------------------------------------
# fBm sampling
# ---------------------------------------------------------------------------


def test_fbm_h_half_is_bm_increments():
    g = TimeGrid(1.0, 256)
    b = sample_fbm(g, HurstParam(0.5), 40, 0)
    incs = np.diff(b, axis=0).ravel()  # ~1e4 draws
    se = np.sqrt(2.0 / incs.size) * g.h
    assert abs(incs.var() - g.h) < 3 * se


def test_fbm_unit_time_variance():
    g = TimeGrid(1.0, 2)
    hp = HurstParam(0.4)
    b1 = np.concatenate([sample_fbm(g, hp, 500, s)[-1] for s in range(20)])
    n = b1.size
    se = np.sqrt(2.0 / n)
    assert abs(b1.var() - 1.0) < 3 * se


def test_fbm_covariance_oracle():
    # Cov(b_1, b_0.5) = (1 + 0.5^0.8 - 0.5^0.8) / 2 = 0.5 for H = 0.4.
    g = TimeGrid(1.0, 2)
    hp = HurstParam(0.4)
    full = np.concatenate([sample_fbm(g, hp, 1000, s) for s in range(100)], axis=1)
    prods = full[1] * full[2]  # 1e5 samples of b_{0.5} b_1
    se = prods.std(ddof=1) / np.sqrt(prods.size)
    assert abs(prods.mean() - 0.5) < 3 * se


def test_fbm_self_similarity():
    # Increment variance over lag 4h vs lag h scales like 4^(2H).
    g = TimeGrid(1.0, 128)
    hp = HurstParam(0.4)
    b = sample_fbm(g, hp, 800, 1)
    v1 = np.diff(b, axis=0).var()
    v4 = (b[4::4] - b[:-4:4]).var()
    ratio = v4 / v1
    se = ratio * np.sqrt(2.0 / (b.shape[1] * 31))
    assert abs(ratio - 4.0 ** (2 * hp.H)) < 3 * se


def test_fbm_seed_determinism_bitwise():
    g = TimeGrid(1.0, 64)
    hp = HurstParam(0.4)
    assert np.array_equal(sample_fbm(g, hp, 3, 7), sample_fbm(g, hp, 3, 7))


def test_fbm_refinement_consistency_ks():
    # Marginal at t = 1 sampled on n and on n/2 grids has the same law.
    hp = HurstParam(0.4)
    fine = np.concatenate([sample_fbm(TimeGrid(1.0, 128), hp, 200, s)[-1] for s in range(4)])
    coarse = np.concatenate(
        [sample_fbm(TimeGrid(1.0, 64), hp, 200, 100 + s)[-1] for s in range(4)]
    )
    assert ks_2samp(fine, coarse).pvalue > 0.01


def test_mixed_driver_shapes_and_independence_of_blocks():
    g = TimeGrid(1.0, 32)
    drv = sample_mixed(g, HurstParam(0.4), 2, 3, seed=5)
    assert drv.bH.shape == (33, 2) and drv.w.shape == (33, 3)
    assert drv.d == 2 and drv.e == 3
    assert np.all(drv.bH[0] == 0) and np.all(drv.w[0] == 0)


def test_rng_for_worker_streams():
    a = rng_for(1, 0).standard_normal(4)
    b = rng_for(1, 1).standard_normal(4)
    assert not np.allclose(a, b)
    assert np.array_equal(a, rng_for(1, 0).standard_normal(4))


# ---------------------------------------------------------------------------
# Volterra kernel and Cameron-Martin controls
# ---------------------------------------------------------------------------


def test_volterra_kernel_h_half_indicator():
    t = np.array([0.5, 1.0])
    s = np.array([0.25, 1.5])
    assert np.array_equal(volterra_kernel(0.5, t, s), np.array([1.0, 0.0]))


def test_volterra_kernel_reproduces_fbm_covariance():
    from scipy.integrate import quad

    H = 0.4
    t, s = 1.0, 0.6
    val, _ = quad(lambda r: volterra_kernel(H, t, r) * volterra_kernel(H, s, r), 0, s,
                  limit=200)
    target = 0.5 * (t ** (2 * H) + s ** (2 * H) - abs(t - s) ** (2 * H))
    assert abs(val - target) < 1e-3


def test_cm_to_path_constant_udot_h_half():
    g = TimeGrid(1.0, 64)
    ctrl = CameronMartinControl(g, HurstParam(0.5), np.full((64, 1), 2.5), np.zeros((64, 0)))
    u, _ = cm_to_path(ctrl)
    assert np.allclose(u[:, 0], 2.5 * g.points, atol=1e-12)


def test_cm_to_path_constant_udot_volterra_oracle():
    g = TimeGrid(1.0, 1024)
    ctrl = CameronMartinControl(g, HurstParam(0.4), np.ones((1024, 1)), np.zeros((1024, 0)))
    u, _ = cm_to_path(ctrl)
    assert abs(u[-1, 0] - VOLTERRA_INTEGRAL_H04) < 1e-3


def test_cm_zero_control():
    g = TimeGrid(1.0, 16)
    ctrl = zero_control(g, HurstParam(0.4), 2, 1)
    u, v = cm_to_path(ctrl)
    assert not np.any(u) and not np.any(v) and ctrl.sq_norm == 0.0


def test_cm_norm_examples():
    g = TimeGrid(1.0, 32)
    hp = HurstParam(0.4)
    only_v = CameronMartinControl(g, hp, np.zeros((32, 0)), np.ones((32, 1)))
    assert abs(cm_norm(only_v) - 1.0) < 1e-14
    both = CameronMartinControl(g, hp, np.ones((32, 1)), np.full((32, 1), 2.0))
    assert abs(cm_norm(both) - 5.0) < 1e-14


@settings(max_examples=25, deadline=None)
@given(lam=st.floats(-3, 3, allow_nan=False), seed=st.integers(0, 10**6))
def test_cm_norm_quadratic_form(lam, seed):
    g = TimeGrid(1.0, 16)
    rng = np.random.default_rng(seed)
    ctrl = CameronMartinControl(g, HurstParam(0.4), rng.standard_normal((16, 2)),
                                rng.standard_normal((16, 1)))
    assert np.isclose(cm_norm(ctrl.scaled(lam)), lam**2 * cm_norm(ctrl), rtol=1e-12, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_cm_to_path_linear(seed):
    g = TimeGrid(1.0, 16)
    hp = HurstParam(0.4)
    rng = np.random.default_rng(seed)
    c1 = CameronMartinControl(g, hp, rng.standard_normal((16, 1)), rng.standard_normal((16, 1)))
    c2 = CameronMartinControl(g, hp, rng.standard_normal((16, 1)), rng.standard_normal((16, 1)))
    u12, v12 = cm_to_path(c1 + c2)
    u1, v1 = cm_to_path(c1)
    u2, v2 = cm_to_path(c2)
    assert np.allclose(u12, u1 + u2, atol=1e-12)
    assert np.allclose(v12, v1 + v2, atol=1e-12)


def test_cm_reconstructed_path_holder_bounded():
    from roughflow import path_holder_norm

    g = TimeGrid(1.0, 256)
    hp = HurstParam(0.4)
    rng = np.random.default_rng(0)
    ctrl = CameronMartinControl(g, hp, rng.standard_normal((256, 1)), np.zeros((256, 0)))
    u, _ = cm_to_path(ctrl)
    assert np.isfinite(path_holder_norm(g, u, hp.H - 0.05))


# ---------------------------------------------------------------------------
# CSV round-trips
# ---------------------------------------------------------------------------


def test_path_csv_roundtrip(tmp_path):
    g = TimeGrid(1.0, 32)
    vals = sample_fbm(g, HurstParam(0.4), 3, 1)
    p = tmp_path / "path.csv"
    write_path_csv(p, g, vals)
    t, back = read_path_csv(p)
    assert np.array_equal(t, g.points)
    assert np.array_equal(back, vals)  # 17 significant digits round-trip exactly


def test_control_csv_roundtrip(tmp_path):
    g = TimeGrid(1.0, 16)
    hp = HurstParam(0.4)
    rng = np.random.default_rng(4)
    ctrl = CameronMartinControl(g, hp, rng.standard_normal((16, 2)), rng.standard_normal((16, 1)))
    p = tmp_path / "ctrl.csv"
    write_control_csv(p, ctrl)
    back = read_control_csv(p, hp)
    assert back.grid == g
    assert np.array_equal(back.udot, ctrl.udot)
    assert np.array_equal(back.vdot, ctrl.vdot)
