"""Level-2 lifts, translation, dilation, Hölder norms, rough distance."""

import numpy as np
import pytest

from roughflow import (
    CameronMartinControl,
    HurstParam,
    Level2RoughPath,
    MixedDriverPath,
    ParameterError,
    ResourceError,
    TimeGrid,
    dilate,
    holder_norms,
    lift_cm,
    lift_mixed,
    rough_distance,
    sample_bm,
    sample_fbm,
    sample_mixed,
    translate,
    zero_control,
)

HP = HurstParam(0.4)
HP_BM = HurstParam(0.5)


def _cm(grid, udot, vdot, hurst=HP_BM):
    return CameronMartinControl(grid, hurst, udot, vdot)


# ---------------------------------------------------------------------------
# lift_mixed
# ---------------------------------------------------------------------------


def test_scalar_geometric_area_is_half_square():
    g = TimeGrid(1.0, 64)
    rp = lift_mixed(sample_mixed(g, HP, 1, 0, seed=0))
    assert np.max(np.abs(rp.area[:, 0, 0] - 0.5 * rp.inc[:, 0] ** 2)) < 1e-12
    # Also over composed intervals, via Chen.
    lvl1 = rp.first_level(5, 40)[0]
    assert abs(rp.second_level(5, 40)[0, 0] - 0.5 * lvl1**2) < 1e-12


def test_ito_area_is_centered():
    g = TimeGrid(1.0, 8)
    vals = np.array(
        [lift_mixed(sample_mixed(g, HP_BM, 0, 1, seed=s)).second_level(0, 8)[0, 0]
         for s in range(10**4)]
    )
    se = vals.std(ddof=1) / np.sqrt(vals.size)
    assert abs(vals.mean()) < 3 * se


def test_geometric_block_antisymmetric_part():
    g = TimeGrid(1.0, 32)
    rp = lift_mixed(sample_mixed(g, HP, 2, 0, seed=3), refine=1)
    defect = rp.area[:, 0, 1] + rp.area[:, 1, 0] - rp.inc[:, 0] * rp.inc[:, 1]
    assert np.max(np.abs(defect)) < 1e-12


def test_geometric_shuffle_identity_composed():
    g = TimeGrid(1.0, 64)
    rp = lift_mixed(sample_mixed(g, HP, 2, 0, seed=7))
    lvl1 = rp.first_level(0, 64)
    lvl2 = rp.second_level(0, 64)
    sym = 0.5 * (lvl2 + lvl2.T)
    assert np.max(np.abs(sym - 0.5 * np.outer(lvl1, lvl1))) < 1e-10


def test_ito_block_equals_geometric_minus_half_identity():
    # Stratonovich minus Itô is half the discrete quadratic covariation,
    # which converges to (1/2) I_e t as the sub-sampling refines.
    fine = TimeGrid(1.0, 4096)
    drv = sample_mixed(fine, HP_BM, 0, 2, seed=11)
    ito = lift_mixed(drv, refine=256, bm_convention="ito")
    strat = lift_mixed(drv, refine=256, bm_convention="stratonovich")
    diff = strat.second_level(0, 16) - ito.second_level(0, 16)
    dw = np.diff(drv.w, axis=0)
    qv = 0.5 * np.einsum("ka,kb->ab", dw, dw)
    assert np.max(np.abs(diff - qv)) < 1e-12  # exact discrete identity
    assert np.max(np.abs(diff - 0.5 * np.eye(2))) < 0.1  # QV limit


def test_lift_rejects_bad_refine():
    g = TimeGrid(1.0, 8)
    drv = sample_mixed(g, HP_BM, 0, 1, seed=0)
    with pytest.raises(ParameterError):
        lift_mixed(drv, refine=0)
    with pytest.raises(ParameterError):
        lift_mixed(drv, bm_convention="milstein")


def test_lift_refine_memory_guard():
    g = TimeGrid(1.0, 2048)
    drv = MixedDriverPath(g, np.zeros((2049, 0)), sample_bm(g, 512, 0), HP_BM)
    with pytest.raises(ResourceError):
        lift_mixed(drv, refine=64)


def test_ito_refinement_consistency():
    # Itô areas converge as the sub-sampling refines; L2 gap to the finest
    # reference shrinks by at least 1.3x per refine doubling.
    n, r_max, n_seeds = 8, 8, 1000
    fine_grid = TimeGrid(1.0, n * r_max)
    gaps = {1: [], 2: [], 4: []}
    for s in range(n_seeds):
        w = sample_bm(fine_grid, 1, s)
        areas = {}
        for r in (1, 2, 4, 8):
            sub = w[:: r_max // r]
            drv = MixedDriverPath(TimeGrid(1.0, n * r), np.zeros((n * r + 1, 0)), sub, HP_BM)
            areas[r] = lift_mixed(drv, refine=r).area
        for r in (1, 2, 4):
            gaps[r].append(np.sum((areas[r] - areas[8]) ** 2))
    l2 = {r: np.sqrt(np.mean(gaps[r])) for r in gaps}
    assert l2[1] / l2[2] >= 1.3
    assert l2[2] / l2[4] >= 1.3


# ---------------------------------------------------------------------------
# lift_cm
# ---------------------------------------------------------------------------


def test_cm_lift_linear_path_area():
    T = 2.0
    g = TimeGrid(T, 64)
    rp = lift_cm(_cm(g, np.ones((64, 1)), np.zeros((64, 0))))
    assert abs(rp.second_level(0, 64)[0, 0] - T**2 / 2) < 1e-12


def test_cm_lift_zero_control():
    g = TimeGrid(1.0, 16)
    rp = lift_cm(zero_control(g, HP, 2, 1))
    assert not np.any(rp.inc) and not np.any(rp.area)


def test_cm_lift_cross_area_calculus_oracle():
    # u_t = t, v_t = t^2 on [0,1]: int_0^1 u dv = 2/3.
    n = 2**12
    g = TimeGrid(1.0, n)
    mid = (g.points[:-1] + g.points[1:]) / 2
    rp = lift_cm(_cm(g, np.ones((n, 1)), (2 * mid)[:, None]))
    assert abs(rp.second_level(0, n)[0, 1] - 2.0 / 3.0) < 1e-8


def test_cm_lift_shuffle_identity():
    g = TimeGrid(1.0, 32)
    rng = np.random.default_rng(1)
    rp = lift_cm(_cm(g, rng.standard_normal((32, 2)), rng.standard_normal((32, 1)), HP))
    lvl1 = rp.first_level(0, 32)
    lvl2 = rp.second_level(0, 32)
    assert np.max(np.abs(0.5 * (lvl2 + lvl2.T) - 0.5 * np.outer(lvl1, lvl1))) < 1e-10


# ---------------------------------------------------------------------------
# translate
# ---------------------------------------------------------------------------


def test_translate_by_zero_is_identity():
    g = TimeGrid(1.0, 32)
    base = lift_mixed(sample_mixed(g, HP, 1, 1, seed=2))
    out = translate(base, zero_control(g, HP, 1, 1))
    assert np.array_equal(out.inc, base.inc)
    assert np.max(np.abs(out.area - base.area)) < 1e-15


def test_translate_smooth_matches_direct_lift_of_sum():
    n = 256
    g = TimeGrid(1.0, n)
    mid = (g.points[:-1] + g.points[1:]) / 2
    ctrl_x = _cm(g, np.cos(mid)[:, None], np.sin(mid)[:, None])
    ctrl_y = _cm(g, (mid**2)[:, None], np.cos(2 * mid)[:, None])
    out = translate(lift_cm(ctrl_x), ctrl_y)
    direct = lift_cm(ctrl_x + ctrl_y)
    assert np.max(np.abs(out.inc - direct.inc)) < 1e-12
    assert np.max(np.abs(out.area - direct.area)) < 1e-8


def test_translate_first_level_is_exact_sum():
    from roughflow import cm_to_path

    g = TimeGrid(1.0, 64)
    base = lift_mixed(sample_mixed(g, HP, 2, 0, seed=5))
    rng = np.random.default_rng(6)
    ctrl = _cm(g, rng.standard_normal((64, 2)), np.zeros((64, 0)), HP)
    u, _ = cm_to_path(ctrl)
    out = translate(base, ctrl)
    assert np.array_equal(out.inc, base.inc + (u[1:] - u[:-1]))


def test_translate_dimension_mismatch():
    g = TimeGrid(1.0, 16)
    base = lift_mixed(sample_mixed(g, HP, 1, 1, seed=0))
    with pytest.raises(ParameterError):
        translate(base, zero_control(g, HP, 2, 1))


def test_chen_relation_on_translated_output():
    g = TimeGrid(1.0, 64)
    base = lift_mixed(sample_mixed(g, HP, 1, 1, seed=9))
    rng = np.random.default_rng(10)
    out = translate(base, _cm(g, rng.standard_normal((64, 1)), rng.standard_normal((64, 1)), HP))
    rng2 = np.random.default_rng(0)
    for _ in range(50):
        i, u, j = sorted(rng2.choice(65, size=3, replace=False))
        lhs2 = out.second_level(i, j)
        rhs2 = (
            out.second_level(i, u)
            + out.second_level(u, j)
            + np.outer(out.first_level(i, u), out.first_level(u, j))
        )
        assert np.max(np.abs(lhs2 - rhs2)) < 1e-12


# ---------------------------------------------------------------------------
# dilate
# ---------------------------------------------------------------------------


def test_dilate_identity_and_quarter():
    g = TimeGrid(1.0, 16)
    base = lift_mixed(sample_mixed(g, HP, 1, 1, seed=1))
    same = dilate(base, 1.0)
    assert np.array_equal(same.inc, base.inc) and np.array_equal(same.area, base.area)
    quarter = dilate(base, 0.25)
    assert np.allclose(quarter.inc, 0.5 * base.inc, atol=0)
    assert np.allclose(quarter.area, 0.25 * base.area, atol=0)


def test_dilate_semigroup():
    g = TimeGrid(1.0, 16)
    base = lift_mixed(sample_mixed(g, HP, 1, 1, seed=1))
    ab = dilate(dilate(base, 0.3), 0.7)
    once = dilate(base, 0.21)
    assert np.max(np.abs(ab.inc - once.inc)) < 1e-15
    assert np.max(np.abs(ab.area - once.area)) < 1e-15


def test_dilate_rejects_nonpositive():
    g = TimeGrid(1.0, 4)
    base = lift_mixed(sample_mixed(g, HP, 1, 0, seed=0))
    with pytest.raises(ParameterError):
        dilate(base, 0.0)


# ---------------------------------------------------------------------------
# holder_norms
# ---------------------------------------------------------------------------


def test_holder_norm_linear_path():
    c = -1.7
    g = TimeGrid(1.0, 64)
    rp = lift_cm(_cm(g, np.full((64, 1), c), np.zeros((64, 0))))
    rep = holder_norms(rp, 0.4)
    assert abs(rep.first_level_norm - abs(c)) < 1e-12
    assert rep.triple_norm == rep.first_level_norm + rep.second_level_norm


def test_holder_norm_zero_path():
    g = TimeGrid(1.0, 16)
    rp = lift_cm(zero_control(g, HP, 1, 1))
    rep = holder_norms(rp, 0.38)
    assert rep.first_level_norm == 0.0 and rep.second_level_norm == 0.0


def test_holder_norm_rejects_bad_exponent():
    g = TimeGrid(1.0, 4)
    rp = lift_cm(zero_control(g, HP, 1, 0))
    with pytest.raises(ParameterError):
        holder_norms(rp, 0.6)


def test_holder_norm_refinement_stability():
    # alpha = 0.38 < H = 0.4: lift norms at n = 2^12 and 2^13 stay within
    # a [0.8, 1.25] ratio band for at least 9 of 10 seeds.
    ok = 0
    for s in range(10):
        fine_grid = TimeGrid(1.0, 2**13)
        b = sample_fbm(fine_grid, HP, 1, s)
        rp_fine = lift_mixed(
            MixedDriverPath(fine_grid, b, np.zeros((2**13 + 1, 0)), HP), refine=1
        )
        coarse_grid = TimeGrid(1.0, 2**12)
        rp_coarse = lift_mixed(
            MixedDriverPath(coarse_grid, b[::2], np.zeros((2**12 + 1, 0)), HP), refine=1
        )
        r_f = holder_norms(rp_fine, 0.38, method="dyadic").triple_norm
        r_c = holder_norms(rp_coarse, 0.38, method="dyadic").triple_norm
        if 0.8 <= r_c / r_f <= 1.25:
            ok += 1
    assert ok >= 9


def test_holder_dyadic_method_flagged():
    g = TimeGrid(1.0, 2**13)
    rp = lift_cm(zero_control(g, HP, 0, 1))
    assert holder_norms(rp, 0.38).method == "dyadic"
    assert holder_norms(rp, 0.38, method="exact").method == "exact"


# ---------------------------------------------------------------------------
# rough_distance
# ---------------------------------------------------------------------------


def test_rough_distance_identity_and_symmetry():
    g = TimeGrid(1.0, 16)
    a = lift_mixed(sample_mixed(g, HP, 1, 1, seed=0))
    b = lift_mixed(sample_mixed(g, HP, 1, 1, seed=1))
    assert rough_distance(a, a, 0.38) == 0.0
    assert rough_distance(a, b, 0.38) == rough_distance(b, a, 0.38)


def test_rough_distance_triangle_inequality():
    g = TimeGrid(1.0, 16)
    lifts = [lift_mixed(sample_mixed(g, HP, 1, 1, seed=s)) for s in range(30)]
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b, c = (lifts[i] for i in rng.choice(30, size=3, replace=False))
        dac = rough_distance(a, c, 0.38)
        dab = rough_distance(a, b, 0.38)
        dbc = rough_distance(b, c, 0.38)
        assert dac <= dab + dbc + 1e-12


def test_rough_distance_grid_mismatch():
    a = lift_mixed(sample_mixed(TimeGrid(1.0, 16), HP, 1, 0, seed=0))
    b = lift_mixed(sample_mixed(TimeGrid(1.0, 32), HP, 1, 0, seed=0))
    with pytest.raises(ParameterError):
        rough_distance(a, b, 0.38)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_json_roundtrip_lossless():
    g = TimeGrid(1.0, 16)
    rp = lift_mixed(sample_mixed(g, HP, 2, 1, seed=4))
    back = Level2RoughPath.from_json(rp.to_json())
    assert back.grid == rp.grid and back.dim == rp.dim
    assert np.array_equal(back.inc, rp.inc)
    assert np.array_equal(back.area, rp.area)
