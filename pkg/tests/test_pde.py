import math

import numpy as np
import pytest

from roughqbsde import scenarios as S
from roughqbsde.bsde import BsdeProblem, Discretization, ForwardModel, RoughPart
from roughqbsde.flows import FlowSpec, VectorField
from roughqbsde.pde import (
    PdeError, PdeProblem, compose_rough_solution, feynman_kac_mc, rough_pde_problem, solve_fd_semilinear,
    write_comparison_csv, write_pde_csv)
from roughqbsde.rough_path import SmoothPath
from roughqbsde.transforms import Generator, IntegrableFunction

C = 0.25
QUAD = Generator.quadratic_in_z(IntegrableFunction.truncated_constant(C))
BM = ForwardModel.arithmetic(0.0, 1.0, 0.0)


def heat(terminal, nonlinearity=None, width=6.0):
    return PdeProblem.centered(BM.b, BM.sigma, nonlinearity, terminal, width=width)


def central(sol, half=1.0):
    """Grid points within one standard deviation of the diffusion over [0, T]."""
    return np.abs(sol.x) <= half


def test_linear_terminal_is_preserved():
    sol = solve_fd_semilinear(heat(lambda x: x), 200, 200)
    assert np.max(np.abs(sol.values - sol.x)) <= 1e-10


def test_quadratic_terminal():
    sol = solve_fd_semilinear(heat(lambda x: x * x), 200, 200)
    m = central(sol)
    exact = sol.x[m] ** 2 + (1.0 - sol.times[:, None])
    assert np.max(np.abs(sol.values[:, m] - exact)) <= 1e-6


def test_quadratic_gradient_nonlinearity():
    sol = solve_fd_semilinear(heat(lambda x: x, lambda t, v, w: C * w * w), 200, 200)
    exact = sol.x[None, :] + C * (1.0 - sol.times[:, None])
    assert np.max(np.abs(sol.values - exact)) <= 1e-4
    assert sol.meta["max_fixed_point_iterations"] <= 50


def test_terminal_slice_exact():
    psi = np.cos
    sol = solve_fd_semilinear(heat(psi, lambda t, v, w: C * w * w), 50, 80)
    assert np.array_equal(sol.values[-1], psi(sol.x))


def test_grid_convergence():
    errs = []
    for n in (25, 50, 100):
        sol = solve_fd_semilinear(heat(np.sin), n, n)
        m = central(sol)
        exact = np.sin(sol.x[m]) * math.exp(-0.5)
        errs.append(np.max(np.abs(sol.values[0, m] - exact)))
    assert errs[0] > errs[1] > errs[2]


def test_stability_and_convergence_failures():
    explicit = PdeProblem(BM.b, BM.sigma, None, np.sin, -6.0, 6.0, 1.0, theta=0.0)
    with pytest.raises(PdeError, match="unstable"):
        solve_fd_semilinear(explicit, 10, 200)
    stiff = heat(lambda x: 3 * x, lambda t, v, w: 5.0 * w * w)
    with pytest.raises(PdeError, match="did not converge"):
        solve_fd_semilinear(stiff, 5, 100, max_iter=2)
    with pytest.raises(ValueError):
        PdeProblem(BM.b, BM.sigma, None, np.sin, 1.0, -1.0)


# -- composition with the flow

def test_identity_flow_composition():
    v = solve_fd_semilinear(heat(np.sin), 20, 40)
    u = compose_rough_solution(v, FlowSpec(VectorField.zeros(1), SmoothPath.linear([1.0])))
    assert np.array_equal(u.values, v.values)


def test_linear_flow_composition():
    lam = 0.4
    v = solve_fd_semilinear(heat(np.sin), 20, 40)
    u = compose_rough_solution(v, FlowSpec(VectorField.linear([lam]), SmoothPath.linear([1.0])))
    np.testing.assert_allclose(u.values, v.values * np.exp(lam * (1.0 - v.times))[:, None], atol=1e-9)
    assert np.array_equal(u.values[-1], np.sin(u.x))


def test_conjugation_matches_direct_solve():
    G = VectorField.sine([0.5], [1.0], [0.3])
    drv = S.smooth_driver([{"sin": [0.5, 1.0]}])
    pr = BsdeProblem(lambda x: x, QUAD, BM, 1.0, RoughPart(G, drv))
    n = 200
    pde, table = rough_pde_problem(pr, n)
    u = compose_rough_solution(solve_fd_semilinear(pde, n, n), table)

    def with_source(t, v, w):
        return QUAD(t, v, w) + G(v)[0] * drv.dot(np.array([t]))[0, 0]

    direct = solve_fd_semilinear(PdeProblem(BM.b, BM.sigma, with_source, lambda x: x, pde.x_min, pde.x_max), n, n)
    m = central(u)
    assert np.max(np.abs(direct.values[:, m] - u.values[:, m])) <= 1e-3


# -- Feynman-Kac

def test_martingale_representation():
    pr = BsdeProblem(lambda x: x, Generator.zeros(), BM, 1.0)
    est, se = feynman_kac_mc(0.3, 0.7, pr, Discretization(10, 4000, "poly2", seed=1))
    assert abs(est - 0.7) < 3 * se


def test_quadratic_representation():
    pr = BsdeProblem(lambda x: x, QUAD, BM, 1.0)
    for s, x in ((0.0, -0.5), (0.5, 1.0)):
        est, se = feynman_kac_mc(s, x, pr, Discretization(25, 5000, "poly2", seed=2))
        assert abs(est - (x + C * (1.0 - s))) <= max(3 * se, 5e-2)


def test_mc_matches_composed_fd_for_linear_field():
    lam = 0.3
    pr = BsdeProblem(lambda x: x, QUAD, BM, 1.0, RoughPart(VectorField.linear([lam]), SmoothPath.linear([1.0])))
    pde, table = rough_pde_problem(pr, 100)
    u = compose_rough_solution(solve_fd_semilinear(pde, 100, 200), table)
    disc = Discretization(25, 5000, "poly2", seed=3)
    for x in np.linspace(-1, 1, 5):
        est, se = feynman_kac_mc(0.0, x, pr, disc)
        assert abs(est - u.at(0.0, x)) <= max(3 * se, 2e-2)


# -- output

def test_csv_outputs(tmp_path):
    sol = solve_fd_semilinear(heat(np.sin), 4, 6)
    write_pde_csv(sol, tmp_path / "pde.csv")
    lines = (tmp_path / "pde.csv").read_text().splitlines()
    assert lines[0] == "t,x,value" and len(lines) == 1 + 5 * 7
    write_comparison_csv([(0.0, 1.0, 0.1, 0.9)], tmp_path / "cmp.csv")
    rows = (tmp_path / "cmp.csv").read_text().splitlines()
    assert rows[0] == "x,mc_estimate,mc_se,fd_value,abs_diff"
    assert float(rows[1].split(",")[4]) == pytest.approx(0.1)
    with pytest.raises(PdeError):
        write_comparison_csv([(0.0, math.nan, 0.1, 0.9)], tmp_path / "bad.csv")
