"""Crank-Nicolson solver for ``v_t + b v_x + sigma^2 v_xx / 2 + f(t, v, sigma v_x) = 0``.

The rough PDE is never stepped in time directly: its solution is the
transformed solution pushed through the backward flow, u = phi(t, v).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .bsde import BsdeProblem, Discretization, build_flow_table, solve_rough_qbsde
from .flows import FlowSpec, FlowTable
from .transforms import transformed_generator


class PdeError(RuntimeError):
    pass


@dataclass(frozen=True)
class PdeProblem:
    """``nonlinearity(t, v, w)`` is evaluated with ``w = sigma v_x``."""

    b: Callable
    sigma: Callable
    nonlinearity: Optional[Callable]
    terminal: Callable
    x_min: float
    x_max: float
    T: float = 1.0
    theta: float = 0.5

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("empty spatial domain")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")

    @classmethod
    def centered(cls, b, sigma, nonlinearity, terminal, x_center: float = 0.0, sigma_scale: float = 1.0,
                 T: float = 1.0, width: float = 6.0) -> "PdeProblem":
        """Domain of ``width`` standard deviations of the diffusion on each side."""
        half = width * sigma_scale * math.sqrt(T)
        return cls(b, sigma, nonlinearity, terminal, x_center - half, x_center + half, T)


@dataclass
class PdeSolution:
    times: np.ndarray
    x: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def at(self, t: float, x):
        """Linear interpolation in x at a grid time."""
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise PdeError(f"t={t} is not on the time grid")
        return np.interp(x, self.x, self.values[i])


def _operator_bands(b, s2, dx, n):
    """Banded (2, 2) storage of L = b D1 + s2/2 D2 on interior rows; boundary rows zero."""
    lo = 0.5 * s2 / dx ** 2 - 0.5 * b / dx
    di = -s2 / dx ** 2
    up = 0.5 * s2 / dx ** 2 + 0.5 * b / dx
    lo[[0, -1]] = di[[0, -1]] = up[[0, -1]] = 0.0
    return lo, di, up


def _apply(lo, di, up, v):
    out = di * v
    out[1:-1] += lo[1:-1] * v[:-2] + up[1:-1] * v[2:]
    return out


def solve_fd_semilinear(problem: PdeProblem, nt: int, nx: int, tol: float = 1e-8, max_iter: int = 50,
                        max_ratio: float = 1e4) -> PdeSolution:
    """Backward theta-scheme (Crank-Nicolson by default) with fixed-point iteration on the nonlinearity.

    Lateral rows impose linear extrapolation (v_0 = 2 v_1 - v_2 and its mirror).
    """
    if nt < 1 or nx < 4:
        raise ValueError("need nt >= 1 and nx >= 4")
    x = np.linspace(problem.x_min, problem.x_max, nx + 1)
    times = np.linspace(0.0, problem.T, nt + 1)
    dx, dt = x[1] - x[0], times[1] - times[0]
    th = problem.theta
    n = x.size
    sig0 = np.broadcast_to(problem.sigma(times[-1], x), x.shape)
    ratio = float(np.max(sig0 ** 2) * dt / dx ** 2)
    if th < 0.5 and ratio > 1.0:
        raise PdeError(f"explicit weighting unstable: sigma^2 dt / dx^2 = {ratio:.3g}")
    if ratio > max_ratio:
        raise PdeError(f"sigma^2 dt / dx^2 = {ratio:.3g} exceeds the configured limit {max_ratio:g}")
    V = np.empty((nt + 1, n))
    V[-1] = problem.terminal(x)
    if not np.all(np.isfinite(V[-1])):
        raise PdeError("terminal values are not finite")
    f = problem.nonlinearity
    iters = []

    def coeffs(t):
        bb = np.broadcast_to(problem.b(t, x), x.shape).astype(float)
        ss = np.broadcast_to(problem.sigma(t, x), x.shape).astype(float)
        return bb, ss

    def source(t, v, ss):
        if f is None:
            return np.zeros_like(v)
        w = ss * np.gradient(v, dx)
        return np.asarray(f(t, v, w), dtype=float)

    b1, s1 = coeffs(times[-1])
    L1 = _operator_bands(b1, s1 ** 2, dx, n)
    for k in range(nt - 1, -1, -1):
        t0, t1 = times[k], times[k + 1]
        b0, s0 = coeffs(t0)
        L0 = _operator_bands(b0, s0 ** 2, dx, n)
        v1 = V[k + 1]
        rhs_lin = v1 + (1 - th) * dt * _apply(*L1, v1)
        f1 = source(t1, v1, s1)
        ab = np.zeros((5, n))
        ab[1, 1:] = -th * dt * L0[2][:-1]
        ab[2] = 1.0 - th * dt * L0[1]
        ab[3, :-1] = -th * dt * L0[0][1:]
        # boundary rows: v_0 - 2 v_1 + v_2 = 0 and mirror
        ab[2, 0], ab[1, 1], ab[0, 2] = 1.0, -2.0, 1.0
        ab[2, -1], ab[3, -2], ab[4, -3] = 1.0, -2.0, 1.0
        v = v1.copy()
        for it in range(1, max_iter + 1):
            rhs = rhs_lin + dt * ((1 - th) * f1 + th * source(t0, v, s0))
            rhs[0] = rhs[-1] = 0.0
            new = solve_banded((2, 2), ab, rhs)
            if not np.all(np.isfinite(new)):
                raise PdeError(f"non-finite values at t={t0:.6g}")
            delta = float(np.max(np.abs(new - v)))
            v = new
            if f is None or delta <= tol * max(1.0, float(np.max(np.abs(v)))):
                break
        else:
            raise PdeError(f"fixed-point iteration did not converge at t={t0:.6g} (last change {delta:.3g})")
        iters.append(it)
        V[k] = v
        b1, s1, L1 = b0, s0, L0
    meta = {"dt": dt, "dx": dx, "nt": nt, "nx": nx, "theta": th, "max_fixed_point_iterations": max(iters),
            "mean_fixed_point_iterations": float(np.mean(iters))}
    return PdeSolution(times, x, V, meta)


def transformed_nonlinearity(generator, table: FlowTable) -> Callable:
    """The flow-conjugated generator as a PDE nonlinearity at tabulated times."""
    def f(t, v, w):
        phi, dphi, d2phi = table.evaluate(table.node(t), v)
        return transformed_generator(generator, t, w, phi, dphi, d2phi)
    return f


def rough_pde_problem(problem: BsdeProblem, nt: int, width: float = 6.0, sigma_scale: float = 1.0,
                      x_center: Optional[float] = None, table_nodes: int = 1601, bound: Optional[float] = None):
    """Transformed PDE for a Markovian rough BSDE, with the flow table it uses.

    Returns (PdeProblem, FlowTable or None).
    """
    fw = problem.forward
    xc = fw.x0 if x_center is None else x_center
    half = width * sigma_scale * math.sqrt(problem.T)
    spec = problem.flow_spec()
    times = np.linspace(0.0, problem.T, nt + 1)
    table = None
    gen = problem.generator
    nonlin = None if gen.zero else (lambda t, v, w: gen(t, v, w))
    if spec is not None and not spec.identity:
        if bound is None:
            edge = np.abs(problem.terminal(np.linspace(xc - half, xc + half, 201)))
            bound = max(10.0, 3.0 * float(np.max(edge)))
        table = build_flow_table(spec, times, bound, table_nodes)
        nonlin = transformed_nonlinearity(gen, table)
    pde = PdeProblem(fw.b, fw.sigma, nonlin, problem.terminal, xc - half, xc + half, problem.T)
    return pde, table


def compose_rough_solution(v: PdeSolution, flow, table_nodes: int = 1601) -> PdeSolution:
    """u(t, x) = phi(t, v(t, x)) on the grid; ``flow`` is a FlowSpec or a FlowTable on v's times."""
    if isinstance(flow, FlowSpec):
        if flow.identity:
            return PdeSolution(v.times, v.x, v.values.copy(), dict(v.meta))
        bound = 1.5 * float(np.max(np.abs(v.values))) + 1.0
        flow = build_flow_table(flow, v.times, bound, table_nodes)
    if flow.identity:
        return PdeSolution(v.times, v.x, v.values.copy(), dict(v.meta))
    U = np.empty_like(v.values)
    for i, t in enumerate(v.times):
        U[i] = flow.evaluate(flow.node(t), v.values[i])[0]
    if abs(v.times[-1] - flow.times[-1]) <= 1e-12 * max(1.0, abs(v.times[-1])):
        # phi(T, .) is the identity
        U[-1] = v.values[-1]
    meta = dict(v.meta)
    meta["composed"] = True
    return PdeSolution(v.times, v.x, U, meta)


def feynman_kac_mc(s: float, x: float, problem: BsdeProblem, disc: Discretization):
    """Y_s^{s,x} by the BSDE pipeline started at (s, x): (estimate, standard error)."""
    sol = solve_rough_qbsde(problem.with_start(s, x), disc)
    return sol.Y0, sol.Y0_se


def write_pde_csv(sol: PdeSolution, filename) -> None:
    if not np.all(np.isfinite(sol.values)):
        raise PdeError("non-finite PDE values; refusing to write")
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "value"])
        for i, t in enumerate(sol.times):
            for xv, val in zip(sol.x, sol.values[i]):
                w.writerow([repr(float(t)), repr(float(xv)), repr(float(val))])


def write_comparison_csv(rows, filename) -> None:
    """rows: iterables (x, mc_estimate, mc_se, fd_value); abs_diff is appended."""
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "mc_estimate", "mc_se", "fd_value", "abs_diff"])
        for x, est, se, fd in rows:
            vals = [x, est, se, fd, abs(est - fd)]
            if not all(math.isfinite(float(v)) for v in vals):
                raise PdeError("non-finite comparison values; refusing to write")
            w.writerow([repr(float(v)) for v in vals])
