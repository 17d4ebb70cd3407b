import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from roughqbsde.rough_path import (
    FactorizationError, GroupIncrement, RoughPath, RoughPathError, SmoothPath, brownian_lift,
    brownian_lift_batch, brownian_sample_path, chen_concat, dyadic_grid, fbm_cholesky, fbm_covariance, fbm_lift,
    fbm_sample_values, lift_smooth_path, p_variation, read_rough_path_csv, write_rough_path_csv)

L_PATH = SmoothPath.from_piecewise_linear([0.0, 0.5, 1.0], [[0, 0], [1, 0], [1, 1]])

finite = st.floats(-3, 3, allow_nan=False)


def vec(d):
    return arrays(float, (d,), elements=finite)


@st.composite
def increments(draw, d=2, degree=2):
    """Random group elements built as products of line segments."""
    n = draw(st.integers(1, 4))
    x = GroupIncrement.identity(d, degree)
    for _ in range(n):
        x = chen_concat(x, GroupIncrement.segment(draw(vec(d)), degree))
    return x


def sym_defect(x):
    return np.max(np.abs(0.5 * (x.level2 + x.level2.T) - 0.5 * np.outer(x.level1, x.level1)))


# -- lifts of smooth paths

def test_constant_path_lifts_to_identity():
    rp = lift_smooth_path(SmoothPath.constant(3), np.linspace(0, 1, 5))
    assert np.all(rp.level1 == 0) and np.all(rp.level2 == 0)


def test_line_segment_level2():
    rp = lift_smooth_path(SmoothPath.linear([1.0, 0.0]), [0.0, 1.0])
    np.testing.assert_allclose(rp.level2[0], [[0.5, 0], [0, 0]], atol=1e-15)


def test_l_path_area_is_half():
    x = lift_smooth_path(L_PATH, [0.0, 1.0]).total()
    assert x.area[0, 1] == pytest.approx(0.5, abs=1e-14)
    assert x.area[1, 0] == pytest.approx(-0.5, abs=1e-14)


def test_l_path_area_matches_riemann_sum():
    t = np.linspace(0, 1, 20001)
    xy = L_PATH(t)
    mid = 0.5 * (xy[1:] + xy[:-1])
    d = np.diff(xy, axis=0)
    riemann = 0.5 * np.sum(mid[:, 0] * d[:, 1] - mid[:, 1] * d[:, 0])
    assert lift_smooth_path(L_PATH, [0.0, 1.0]).total().area[0, 1] == pytest.approx(riemann, abs=1e-12)


def test_l_path_chen_of_segments_equals_direct_lift():
    halves = lift_smooth_path(L_PATH, [0.0, 0.5, 1.0], degree=3)
    direct = lift_smooth_path(L_PATH, [0.0, 1.0], degree=3)
    assert chen_concat(halves.increment(0), halves.increment(1)).allclose(direct.increment(0), 1e-15)


def test_knots_off_grid_are_still_exact():
    path = SmoothPath.from_piecewise_linear([0.0, 0.3, 1.0], [[0, 0], [1, 0], [1, 1]])
    rp = lift_smooth_path(path, [0.0, 0.5, 1.0])
    assert rp.total().area[0, 1] == pytest.approx(0.5, abs=1e-14)


def test_smooth_lift_converges_to_circle_area():
    circ = SmoothPath.from_functions(lambda s: [np.cos(s) - 1, np.sin(s)],
                                     lambda s: [-np.sin(s), np.cos(s)], T=np.pi / 2, d=2)
    exact = 0.5 * (np.pi / 2 - 1.0)   # 1/2 int (x dy - y dx) with x = cos - 1, y = sin
    errs = [abs(lift_smooth_path(circ, [0, np.pi / 2], refinement=r).total().area[0, 1] - exact)
            for r in (4, 8, 16, 32)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-3


def test_lift_rejects_bad_grids():
    with pytest.raises(RoughPathError):
        lift_smooth_path(SmoothPath.linear([1.0]), [0.0, 0.5, 0.4, 1.0])
    with pytest.raises(RoughPathError):
        lift_smooth_path(SmoothPath.linear([1.0]), [0.0, 2.0])


# -- group law

@given(increments(d=2, degree=3))
def test_identity_is_neutral(x):
    e = GroupIncrement.identity(2, 3)
    assert chen_concat(e, x).allclose(x) and chen_concat(x, e).allclose(x)


@given(increments(d=3, degree=3))
def test_inverse_cancels(x):
    e = GroupIncrement.identity(3, 3)
    assert chen_concat(x, x.inverse()).allclose(e, 1e-9)
    assert chen_concat(x.inverse(), x).allclose(e, 1e-9)


def test_inverse_formula_level2():
    x = chen_concat(GroupIncrement.segment([1.0, 2.0]), GroupIncrement.segment([-0.5, 0.3]))
    inv = x.inverse()
    np.testing.assert_allclose(inv.level2, -x.level2 + np.outer(x.level1, x.level1), atol=1e-15)


@given(increments(), increments(), increments())
def test_chen_is_associative(a, b, c):
    assert chen_concat(chen_concat(a, b), c).allclose(chen_concat(a, chen_concat(b, c)), 1e-9)


@given(increments(d=2, degree=3), increments(d=2, degree=3))
def test_products_stay_geometric(a, b):
    x = chen_concat(a, b)
    assert sym_defect(x) < 1e-10
    sym3 = sum(np.transpose(x.level3, perm) for perm in
               [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]) / 6
    np.testing.assert_allclose(sym3, np.einsum("i,j,k->ijk", *(x.level1,) * 3) / 6, atol=1e-9)


def test_chen_rejects_mismatch():
    with pytest.raises(RoughPathError):
        chen_concat(GroupIncrement.identity(2, 2), GroupIncrement.identity(2, 3))
    with pytest.raises(RoughPathError):
        chen_concat(GroupIncrement.identity(2), GroupIncrement.identity(3))


# -- Brownian lifts

def test_brownian_one_dimensional_has_no_area():
    rp = brownian_lift(7, np.linspace(0, 1, 9), d=1)
    np.testing.assert_allclose(rp.level2[:, 0, 0], 0.5 * rp.level1[:, 0] ** 2, atol=1e-15)


def test_brownian_area_antisymmetric_and_geometric():
    rp = brownian_lift(11, np.linspace(0, 1, 17), d=3)
    for i in range(len(rp)):
        x = rp.increment(i)
        assert np.array_equal(x.area, -x.area.T)
        assert sym_defect(x) < 1e-12


def test_brownian_increment_variance():
    x1, _, _ = brownian_lift_batch(3, [0.0, 0.25, 1.0], 2, 4, 0, 20000)
    for k, dt in enumerate((0.25, 0.75)):
        v = x1[:, k, :].ravel()
        se = dt * np.sqrt(2.0 / v.size)
        assert abs(v.var() - dt) < 3 * se


def test_brownian_cells_are_signatures_of_the_fine_path():
    grid = np.linspace(0, 1, 5)
    rp = brownian_lift(5, grid, d=2, subfactor=4)
    ft, vals = brownian_sample_path(5, grid, 2, subfactor=4)
    direct = lift_smooth_path(SmoothPath.from_piecewise_linear(ft, vals), [0.0, 0.5, 1.0])
    assert rp.increment_between(0, 2).allclose(direct.increment(0), 1e-12)
    assert rp.total().allclose(chen_concat(direct.increment(0), direct.increment(1)), 1e-12)


def test_brownian_samples_independent_of_threads():
    a = brownian_lift_batch(9, dyadic_grid(3), 2, 4, 0, 64, threads=1, chunk=8)
    b = brownian_lift_batch(9, dyadic_grid(3), 2, 4, 0, 64, threads=4, chunk=16)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_brownian_area_refinement_decreases():
    diffs = []
    areas = {s: brownian_lift_batch(1, [0.0, 1.0], 2, s, 0, 400)[1][:, 0, 0, 1] for s in (8, 16, 32, 64)}
    for s in (8, 16, 32):
        diffs.append(np.mean(np.abs(areas[2 * s] - areas[s])))
    assert diffs[0] > diffs[1] > diffs[2]


def test_brownian_rejects_bad_input():
    with pytest.raises(RoughPathError):
        brownian_lift(0, [0.0], d=2)
    with pytest.raises(RoughPathError):
        brownian_lift(0, [0.0, 1.0], d=2, p=2.0)
    with pytest.raises(RoughPathError):
        brownian_lift(0, [0.0, 1.0], d=2, subfactor=3)


# -- fractional Brownian motion

def _fbm_cov(H, s, t, n=10000):
    grid = np.array([0.0, s, t])
    vals = fbm_sample_values(2024, H, grid, 1, 0, n)[:, :, 0]
    prod = vals[:, 1] * vals[:, 2]
    return prod.mean(), prod.std(ddof=1) / np.sqrt(n)


@pytest.mark.parametrize("s,t", [(0.25, 1.0), (0.5, 0.75), (0.9, 1.0)])
def test_fbm_half_is_brownian(s, t):
    est, se = _fbm_cov(0.5, s, t)
    assert abs(est - min(s, t)) < 3 * se


def test_fbm_variance_at_one():
    vals = fbm_sample_values(8, 0.3, [0.0, 0.5, 1.0], 1, 0, 10000)[:, 2, 0]
    sq = vals ** 2
    assert abs(sq.mean() - 1.0) < 3 * sq.std(ddof=1) / np.sqrt(sq.size)


def test_fbm_covariance_half_one():
    assert fbm_covariance(0.5, 1.0, 0.3) == pytest.approx(0.5, abs=1e-15)
    est, se = _fbm_cov(0.3, 0.5, 1.0)
    assert abs(est - 0.5) < 3 * se


def test_fbm_lift_degree_follows_p():
    assert fbm_lift(1, 0.3, dyadic_grid(2), 2, 5).degree == 3
    assert fbm_lift(1, 0.45, dyadic_grid(2), 2, 5).degree == 2
    rp = fbm_lift(1, 0.3, dyadic_grid(2), 2, 5)
    for i in range(len(rp)):
        assert sym_defect(rp.increment(i)) < 1e-12


@pytest.mark.parametrize("H", [0.2, 0.25])
def test_fbm_rejects_small_hurst(H):
    with pytest.raises(RoughPathError, match="H > 1/4"):
        fbm_lift(0, H, dyadic_grid(2), 1, 4)


def test_fbm_requires_hp_above_one():
    with pytest.raises(RoughPathError):
        fbm_lift(0, 0.3, dyadic_grid(2), 1, 4, p=3.0)


def test_fbm_factorization_failure_is_reported():
    with pytest.raises(FactorizationError):
        fbm_cholesky(np.array([0.5, 0.5, 1.0]), 0.3)


# -- p-variation

def _one_dim(increments_):
    x1 = np.asarray(increments_, dtype=float)[:, None]
    return RoughPath(np.arange(x1.shape[0] + 1.0), x1, 0.5 * x1[:, :, None] ** 2, p=1.0)


def test_p_variation_examples():
    assert p_variation(lift_smooth_path(SmoothPath.constant(2), np.linspace(0, 1, 6)), 2.5) == 0.0
    assert p_variation(_one_dim([0.5, 1.0, 1.5]), 1.0) == pytest.approx(3.0, abs=1e-14)
    assert p_variation(_one_dim([1.0, -1.0]), 1.0) == pytest.approx(2.0, abs=1e-14)


@settings(max_examples=30)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=8))
def test_p_variation_bounds(incs):
    rp = _one_dim(incs)
    v1 = p_variation(rp, 1.0)
    assert v1 == pytest.approx(sum(abs(x) for x in incs), abs=1e-12)
    assert p_variation(rp, 2.5) <= v1 + 1e-12
    assert p_variation(rp, 2.5) >= abs(sum(incs)) - 1e-12


# -- serialization

@pytest.mark.parametrize("degree", [2, 3])
def test_csv_round_trip(tmp_path, degree):
    rp = fbm_lift(3, 0.3 if degree == 3 else 0.45, dyadic_grid(3), 2, 5)
    path = tmp_path / "driver.csv"
    write_rough_path_csv(rp, path)
    back = read_rough_path_csv(path, p=rp.p)
    assert np.array_equal(back.times, rp.times) and np.array_equal(back.level2, rp.level2)
    if degree == 3:
        assert np.array_equal(back.level3, rp.level3)
    header = path.read_text().splitlines()[0].split(",")
    assert header[:4] == ["t_start", "t_end", "level1_1", "level1_2"]
