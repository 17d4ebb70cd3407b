import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughqbsde.flows import (
    FlowExplosionError, FlowPositivityError, FlowRangeError, FlowSpec, FlowTable, VectorField, _check_state,
    flow_inverse, flow_value, march, monotone_inverse, solve_ode_flow, solve_rde_flow, write_flow_csv)
from roughqbsde.rough_path import RoughPathError, SmoothPath, brownian_lift, dyadic_grid, lift_smooth_path

LINEAR = FlowSpec(VectorField.linear([1.0]), SmoothPath.linear([1.0]))


def wavy(T=1.0):
    """Two-dimensional smooth driver with curvature in both components."""
    return SmoothPath.from_functions(
        lambda s: [math.sin(2 * s), s * s - 0.5 * s],
        lambda s: [2 * math.cos(2 * s), 2 * s - 0.5], T=T, d=2)


NONCOMMUTING = VectorField.affine([1.0, 0.0], [0.0, 1.0])   # G1 = 1, G2 = y


def test_zero_field_is_identity():
    y = np.linspace(-2, 2, 7)
    v = solve_ode_flow(FlowSpec(VectorField.zeros(2), wavy()), 0.3, y)
    assert np.array_equal(v.phi, y) and np.all(v.dphi == 1) and np.all(v.d2phi == 0)
    rv = solve_rde_flow(FlowSpec(VectorField.zeros(2), brownian_lift(1, dyadic_grid(4), 2)), 0.0, y)
    assert np.array_equal(rv.phi, y)
    assert np.array_equal(flow_inverse(FlowSpec(VectorField.zeros(2), wavy()), 0.0, y), y)


def test_linear_flow_closed_form():
    v = solve_ode_flow(LINEAR, 0.0, 1.0)
    assert abs(v.phi - math.e) <= 1e-8
    assert abs(v.dphi - math.e) <= 1e-8
    assert abs(v.d2phi) <= 1e-8


def test_constant_field_adds_driver_increment():
    drv = SmoothPath.from_functions(lambda s: [math.sin(3 * s)], lambda s: [3 * math.cos(3 * s)], T=1.0, d=1)
    spec = FlowSpec(VectorField.constant([1.0]), drv)
    for t in (0.0, 0.4, 0.9):
        v = solve_ode_flow(spec, t, np.array([-1.0, 0.5]))
        np.testing.assert_allclose(v.phi, np.array([-1.0, 0.5]) + (math.sin(3.0) - math.sin(3 * t)), atol=1e-10)
        np.testing.assert_allclose(v.dphi, 1.0, atol=1e-12)


@pytest.mark.parametrize("lam", [(0.5, -0.3), (1.0, 0.7)])
def test_commuting_fields_ignore_area(lam):
    rp = brownian_lift(17, dyadic_grid(6), 2)
    spec = FlowSpec(VectorField.linear(lam), rp)
    nodes = rp.node_values()
    for i in (0, 20, 63):
        y = np.array([0.7, -1.2])
        v = solve_rde_flow(spec, rp.times[i], y)
        incr = nodes[-1] - nodes[i]
        np.testing.assert_allclose(v.phi, y * np.exp(np.dot(lam, incr)), rtol=1e-6)


def test_noncommuting_rde_on_smooth_lift_matches_ode():
    drv = wavy()
    ode = solve_ode_flow(FlowSpec(NONCOMMUTING, drv), 0.0, np.array([-0.5, 0.3]))
    rp = lift_smooth_path(drv, dyadic_grid(8))
    rde = solve_rde_flow(FlowSpec(NONCOMMUTING, rp), 0.0, np.array([-0.5, 0.3]))
    np.testing.assert_allclose(rde.phi, ode.phi, atol=1e-4)


def test_rde_converges_to_ode_under_refinement():
    drv = wavy()
    field = VectorField.sine([0.6, 0.4], [1.0, 2.0], [0.2, -0.1])
    y = np.array([0.3])
    ode = solve_ode_flow(FlowSpec(field, drv, steps=4000), 0.0, y).phi
    errs = [abs(solve_rde_flow(FlowSpec(field, lift_smooth_path(drv, dyadic_grid(k)), rk_substeps=1), 0.0,
                               y).phi - ode)[0] for k in (2, 3, 4)]
    assert errs[0] > errs[1] > errs[2]


def test_terminal_identity_is_exact():
    y = np.linspace(-3, 3, 11)
    for spec in (FlowSpec(NONCOMMUTING, wavy()), FlowSpec(NONCOMMUTING, brownian_lift(3, dyadic_grid(4), 2))):
        v = flow_value(spec, spec.T, y)
        assert np.array_equal(v.phi, y) and np.all(v.dphi == 1.0) and np.all(v.d2phi == 0.0)


@pytest.mark.parametrize("rough", [False, True])
def test_derivatives_match_finite_differences(rough):
    field = VectorField.sine([0.8, 0.5], [1.0, 1.5], [0.0, 0.4])
    drv = brownian_lift(5, dyadic_grid(5), 2) if rough else wavy()
    spec = FlowSpec(field, drv)
    h = 1e-4
    y = np.array([-1.0, 0.2, 1.4])
    v, up, dn = (flow_value(spec, 0.0, y + s) for s in (0.0, h, -h))
    np.testing.assert_allclose(v.dphi, (up.phi - dn.phi) / (2 * h), atol=1e-7)
    np.testing.assert_allclose(v.d2phi, (up.dphi - dn.dphi) / (2 * h), atol=1e-6)


@pytest.mark.parametrize("rough", [False, True])
def test_inverse_derivative_identities(rough):
    field = VectorField.sine([0.8, 0.5], [1.0, 1.5], [0.0, 0.4])
    drv = brownian_lift(6, dyadic_grid(5), 2) if rough else wavy()
    spec = FlowSpec(field, drv)
    y = np.array([-0.7, 0.4])
    v = flow_value(spec, 0.0, y)
    h = 1e-3
    psi = [flow_inverse(spec, 0.0, v.phi + s, tol=1e-13) for s in (-h, 0.0, h)]
    dpsi = (psi[2] - psi[0]) / (2 * h)
    d2psi = (psi[2] - 2 * psi[1] + psi[0]) / h ** 2
    np.testing.assert_allclose(dpsi * v.dphi, 1.0, atol=1e-5)
    np.testing.assert_allclose(d2psi, -v.d2phi / v.dphi ** 3, atol=1e-5)


def test_linear_flow_inverse():
    assert abs(flow_inverse(LINEAR, 0.0, math.e) - 1.0) <= 1e-8


def test_inverse_round_trip_random_points():
    spec = FlowSpec(VectorField.sine([0.8, 0.5], [1.0, 1.5]), brownian_lift(8, dyadic_grid(5), 2))
    y = np.random.default_rng(0).uniform(-3, 3, 100)
    x = flow_value(spec, dyadic_grid(5)[4], y).phi
    np.testing.assert_allclose(flow_inverse(spec, dyadic_grid(5)[4], x), y, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(0.2, 3.0), st.floats(-3, 3))
def test_flow_is_increasing(amp, freq, phase):
    spec = FlowSpec(VectorField.sine([amp], [freq], [phase]), SmoothPath.linear([1.0]), steps=200)
    v = solve_ode_flow(spec, 0.0, np.linspace(-3, 3, 41))
    assert np.all(np.diff(v.phi) > 0) and np.all(v.dphi > 0)


def test_rough_flow_only_at_grid_nodes():
    spec = FlowSpec(NONCOMMUTING, brownian_lift(1, dyadic_grid(3), 2))
    with pytest.raises(RoughPathError, match="not a node"):
        solve_rde_flow(spec, 0.3, 0.0)


def test_explosion_guard():
    spec = FlowSpec(VectorField.from_callables([[lambda y: y * y, lambda y: 2 * y, lambda y: 2 + 0 * y]]),
                    SmoothPath.linear([5.0]))
    with pytest.raises(FlowExplosionError):
        solve_ode_flow(spec, 0.0, 1.0)


def test_positivity_check_reports_minimum():
    stats = {"min_dphi": 1.0, "max_dphi": 1.0}
    _check_state((np.zeros(2), np.array([0.5, 2.0]), np.zeros(2)), 1e6, stats)
    assert stats == {"min_dphi": 0.5, "max_dphi": 2.0}
    with pytest.raises(FlowPositivityError):
        _check_state((np.zeros(2), np.array([0.5, -1e-3]), np.zeros(2)), 1e6, stats)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        FlowSpec(VectorField.linear([1.0]), wavy())


def test_finite_difference_fallback_for_missing_orders():
    f = VectorField.from_callables([[np.sin, np.cos, lambda y: -np.sin(y)]])
    y = np.linspace(-1, 1, 5)
    np.testing.assert_allclose(f.derivative(0, 3, y), -np.cos(y), atol=1e-6)


def test_monotone_inverse_brackets_far_targets():
    y = monotone_inverse(lambda y: (y ** 3 + y, 3 * y ** 2 + 1), np.array([1000.0, -50.0, 0.0]))
    np.testing.assert_allclose(y ** 3 + y, [1000.0, -50.0, 0.0], atol=1e-9)


# -- tables

def test_table_interpolates_march():
    spec = FlowSpec(VectorField.sine([0.8, 0.5], [1.0, 1.5]), brownian_lift(4, dyadic_grid(4), 2))
    times = dyadic_grid(4)
    table = FlowTable.build(spec, times, np.linspace(-5, 5, 801))
    y = np.random.default_rng(1).uniform(-4.9, 4.9, 50)
    phi, dphi, d2phi, _ = march(spec, y, times)
    for i in (0, 7, 16):
        tv = table.evaluate(i, y)
        np.testing.assert_allclose(tv[0], phi[i], atol=1e-8)
        np.testing.assert_allclose(tv[1], dphi[i], rtol=1e-6)
        np.testing.assert_allclose(tv[2], d2phi[i], rtol=1e-4, atol=1e-4)
    np.testing.assert_allclose(table.inverse(0, phi[0]), y, atol=1e-8)
    with pytest.raises(FlowRangeError):
        table.evaluate(0, np.array([6.0]))
    with pytest.raises(FlowRangeError):
        table.node(0.1)


def test_march_order_independent():
    spec = FlowSpec(NONCOMMUTING, wavy())
    a = march(spec, [0.5], [0.0, 0.5, 1.0])
    b = march(spec, [0.5], [1.0, 0.0, 0.5])
    np.testing.assert_allclose(a[0][[0, 1, 2], 0], b[0][[1, 2, 0], 0], atol=1e-12)


def test_flow_csv(tmp_path):
    spec = FlowSpec(VectorField.linear([1.0]), SmoothPath.linear([1.0]))
    path = tmp_path / "flow.csv"
    write_flow_csv(spec, 1.0, path, times=np.linspace(0, 1, 5))
    rows = [r.split(",") for r in path.read_text().splitlines()]
    assert rows[0] == ["t", "phi", "dphi", "d2phi"]
    assert float(rows[1][1]) == pytest.approx(math.e, abs=1e-8)
    assert float(rows[-1][1]) == 1.0
