"""Least-squares Monte Carlo for Markovian quadratic BSDEs with a rough term.

The equation is

    Y_t = psi(X_T) + int_t^T g(s, Y, Z) ds + int_t^T G(Y) d eta - int_t^T Z dW

with X an Euler-Maruyama diffusion driven by the same W.  The ``d eta`` term
is removed by conjugation with the backward flow and the ``f(y) z^2`` term,
optionally, by the Zvonkin map; the remaining BSDE is solved by backward
regression.
"""
from __future__ import annotations

import csv
import datetime
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import _rng
from .flows import FlowSpec, FlowTable, VectorField
from .rough_path import RoughPath, SmoothPath
from .transforms import (Generator, ZvonkinRangeError, transformed_generator, zvonkin_build,
                         zvonkin_Gtilde, zvonkin_residual_generator)

log = logging.getLogger(__name__)


class BsdeError(RuntimeError):
    pass


@dataclass(frozen=True)
class ForwardModel:
    """dX = b(t, X) dt + sigma(t, X) dW started from x0 at time s (vectorized b, sigma)."""

    b: Callable
    sigma: Callable
    x0: float = 0.0
    s: float = 0.0

    @classmethod
    def arithmetic(cls, mu: float = 0.0, sigma: float = 1.0, x0: float = 0.0, s: float = 0.0) -> "ForwardModel":
        mu, sigma = float(mu), float(sigma)
        return cls(lambda t, x: np.full_like(x, mu), lambda t, x: np.full_like(x, sigma), float(x0), float(s))

    @classmethod
    def ornstein_uhlenbeck(cls, kappa: float, theta: float, sigma: float, x0: float = 0.0,
                           s: float = 0.0) -> "ForwardModel":
        kappa, theta, sigma = float(kappa), float(theta), float(sigma)
        return cls(lambda t, x: kappa * (theta - x), lambda t, x: np.full_like(x, sigma), float(x0), float(s))

    def started_at(self, s: float, x0: float) -> "ForwardModel":
        return ForwardModel(self.b, self.sigma, float(x0), float(s))


@dataclass(frozen=True)
class RoughPart:
    field: VectorField
    driver: Union[SmoothPath, RoughPath]
    steps: int = 1000
    rk_substeps: int = 2


@dataclass(frozen=True)
class BsdeProblem:
    terminal: Callable
    generator: Generator
    forward: ForwardModel
    T: float = 1.0
    rough_part: Optional[RoughPart] = None

    def __post_init__(self):
        if self.T <= self.forward.s:
            raise ValueError("horizon must exceed the start time")
        if self.rough_part is not None and abs(self.rough_part.driver.T - self.T) > 1e-12:
            raise ValueError("driver horizon differs from the BSDE horizon")

    def with_start(self, s: float, x0: float) -> "BsdeProblem":
        return BsdeProblem(self.terminal, self.generator, self.forward.started_at(s, x0), self.T, self.rough_part)

    def flow_spec(self) -> Optional[FlowSpec]:
        rp = self.rough_part
        if rp is None:
            return None
        return FlowSpec(rp.field, rp.driver, steps=rp.steps, rk_substeps=rp.rk_substeps)


@dataclass(frozen=True)
class Discretization:
    """``basis`` is ``polyQ`` (global polynomials of degree Q) or ``pwlK`` (hats on K bins)."""

    n_steps: int = 50
    n_paths: int = 10_000
    basis: str = "poly4"
    seed: int = 0
    truncation: Optional[float] = None
    threads: int = 1
    table_nodes: int = 1601
    cond_threshold: float = 1e12
    chunk: int = 4096

    def __post_init__(self):
        if self.n_steps < 1 or self.n_paths < 1:
            raise ValueError("n_steps and n_paths must be at least 1")
        if basis_size(self.basis) >= self.n_paths:
            raise ValueError("basis cardinality must be below the number of paths")


@dataclass
class BsdeSolution:
    times: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    Y0: float
    Y0_se: float
    se_Y: np.ndarray
    se_Z: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> np.ndarray:
        """Rows (t, mean_Y, se_Y, mean_Z, se_Z) for t_0 .. t_{N-1}."""
        n = self.Z.shape[1]
        mean_y = self.Y[:, :n].mean(axis=0)
        mean_y[0] = self.Y0
        return np.column_stack([self.times[:n], mean_y, self.se_Y[:n], self.Z.mean(axis=0), self.se_Z])


# --------------------------------------------------------------------------
# forward simulation

def simulate_forward(model: ForwardModel, disc: Discretization, T: float):
    """Euler-Maruyama paths (M, N+1), Brownian increments (M, N) and the time grid."""
    times = np.linspace(model.s, T, disc.n_steps + 1)
    dt = np.diff(times)
    M, N = disc.n_paths, disc.n_steps

    def normals(bounds):
        lo, hi = bounds
        return np.stack([_rng.substream(disc.seed, _rng.FORWARD_PATHS, m).standard_normal(N)
                         for m in range(lo, hi)])

    z = np.concatenate(_rng.parallel_map(normals, _rng.chunks(M, disc.chunk), disc.threads))
    dW = z * np.sqrt(dt)
    X = np.empty((M, N + 1))
    X[:, 0] = model.x0
    for i in range(N):
        x = X[:, i]
        X[:, i + 1] = x + model.b(times[i], x) * dt[i] + model.sigma(times[i], x) * dW[:, i]
    return times, X, dW


# --------------------------------------------------------------------------
# regression

def basis_size(basis: str) -> int:
    m = re.fullmatch(r"(poly|pwl)(\d+)", basis)
    if not m:
        raise ValueError(f"unknown basis {basis!r}; use polyQ or pwlK")
    k = int(m.group(2))
    return k + 1


@dataclass(frozen=True)
class Fit:
    """Fitted conditional expectation x -> sum_j coef_j b_j(x)."""

    basis: str
    coef: np.ndarray
    center: float
    scale: float
    knots: Optional[np.ndarray]
    cond: float
    ridge: float = 0.0

    def design(self, x) -> np.ndarray:
        return _design(self.basis, np.asarray(x, dtype=float), self.center, self.scale, self.knots)

    def __call__(self, x) -> np.ndarray:
        return self.design(x) @ self.coef


def _design(basis, x, center, scale, knots):
    if scale == 0:
        return np.ones((x.size, 1))
    if basis.startswith("poly"):
        q = int(basis[4:])
        return np.vander((x - center) / scale, q + 1, increasing=True)
    # hat functions on the knots, constant continuation outside
    xc = np.clip(x, knots[0], knots[-1])
    j = np.clip(np.searchsorted(knots, xc, side="right") - 1, 0, knots.size - 2)
    w = (xc - knots[j]) / (knots[j + 1] - knots[j])
    A = np.zeros((x.size, knots.size))
    rows = np.arange(x.size)
    A[rows, j] = 1 - w
    A[rows, j + 1] = w
    return A


def regress(basis: str, x, target, cond_threshold: float = 1e12) -> Fit:
    """Least squares fit of ``target`` on basis functions of the cross-section ``x``.

    A degenerate cross-section (all x equal) reduces to the constant basis.
    If the Gram matrix condition number exceeds ``cond_threshold`` a ridge
    term is added and its weight recorded on the fit.
    """
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    center = float(x.mean())
    scale = float(x.std())
    if scale <= 1e-14 * max(1.0, abs(center)):
        scale = 0.0
    knots = None
    if scale and basis.startswith("pwl"):
        k = int(basis[3:])
        # quantile knots keep every bin populated
        knots = np.unique(np.quantile(x, np.linspace(0.0, 1.0, k + 1)))
        if knots.size < 2:
            knots, scale = None, 0.0
    A = _design(basis, x, center, scale, knots)
    if A.shape[1] >= x.size and A.shape[1] > 1:
        raise BsdeError("basis cardinality must be below the number of paths")
    s = np.linalg.svd(A, compute_uv=False)
    cond = float((s[0] / s[-1]) ** 2) if s[-1] > 0 else math.inf
    ridge = 0.0
    if cond > cond_threshold:
        gram = A.T @ A
        ridge = 1e-10 * float(np.trace(gram)) / gram.shape[0]
        coef = np.linalg.solve(gram + ridge * np.eye(gram.shape[0]), A.T @ target)
        log.info("ill-conditioned regression (cond %.3g); ridge weight %.3g", cond, ridge)
    else:
        coef = np.linalg.lstsq(A, target, rcond=None)[0]
    return Fit(basis, coef, center, scale, knots, cond, ridge)


# --------------------------------------------------------------------------
# backward induction

def _lsmc(times, X, dW, xi, gen, disc: Discretization, bound: float):
    """Explicit backward regression.

    ``gen(i, y, z)`` is the generator at t_i.  Returns Y (M, N+1), Z (M, N),
    standard errors of the Y means and of the Z regression targets, and
    diagnostics.
    """
    M, N = dW.shape
    dt = np.diff(times)
    Y = np.empty((M, N + 1))
    Z = np.empty((M, N))
    se_Y = np.zeros(N + 1)
    se_Z = np.zeros(N)
    Y[:, N] = xi
    # pathwise xi + sum_j g_j dt: with an intercept in the basis the mean of
    # Y_i equals its mean, so its spread is the Monte Carlo error of Y_i
    acc = np.array(xi, dtype=float)
    se_Y[N] = acc.std(ddof=1) / math.sqrt(M) if M > 1 else 0.0
    conds, clipped, ridges = [], 0, 0
    for i in range(N - 1, -1, -1):
        y_next = Y[:, i + 1]
        x = X[:, i]
        pred_fit = regress(disc.basis, x, y_next, disc.cond_threshold)
        y_pred = pred_fit(x)
        # subtracting the regressed value leaves the conditional mean of the
        # Z target unchanged and removes most of its variance
        z_target = (y_next - y_pred) * dW[:, i] / dt[i]
        z_fit = regress(disc.basis, x, z_target, disc.cond_threshold)
        z = z_fit(x)
        gdt = gen(i, np.clip(y_pred, -bound, bound), z) * dt[i]
        y_target = y_next + gdt
        acc += gdt
        if not np.all(np.isfinite(y_target)):
            raise BsdeError(f"non-finite regression targets at step {i}")
        y_fit = regress(disc.basis, x, y_target, disc.cond_threshold)
        y = y_fit(x)
        hit = np.abs(y) > bound
        clipped += int(hit.sum())
        Y[:, i] = np.clip(y, -bound, bound)
        Z[:, i] = z
        se_Y[i] = acc.std(ddof=1) / math.sqrt(M) if M > 1 else 0.0
        se_Z[i] = z_target.std(ddof=1) / math.sqrt(M) if M > 1 else 0.0
        conds.append(max(pred_fit.cond, z_fit.cond, y_fit.cond))
        ridges += sum(fit.ridge > 0 for fit in (pred_fit, z_fit, y_fit))
    rate = clipped / (M * N)
    if rate > 0.1:
        log.warning("truncation active on %.1f%% of path-steps", 100 * rate)
    diag = {"max_condition": float(max(conds)), "ridge_fallbacks": ridges, "truncation_rate": rate,
            "truncation_bound": bound}
    return Y, Z, se_Y, se_Z, diag


def _default_bound(disc: Discretization, xi) -> float:
    if disc.truncation is not None:
        return float(disc.truncation)
    return max(10.0, 3.0 * float(np.max(np.abs(xi))))


def _terminal(problem: BsdeProblem, X):
    xi = np.asarray(problem.terminal(X[:, -1]), dtype=float)
    if not np.all(np.isfinite(xi)):
        raise BsdeError("terminal values are not finite")
    return np.broadcast_to(xi, X[:, -1].shape).copy()


def _solution(times, X, Y, Z, se_Y, se_Z, diag, Y0=None, Y0_se=None):
    if Y0 is None:
        Y0, Y0_se = float(Y[:, 0].mean()), float(se_Y[0])
    return BsdeSolution(times, X, Y, Z, float(Y0), float(Y0_se), se_Y, se_Z, diag)


def solve_backward_lsmc(problem: BsdeProblem, disc: Discretization, _paths=None) -> BsdeSolution:
    """LSMC for the equation without rough part."""
    times, X, dW = _paths if _paths is not None else simulate_forward(problem.forward, disc, problem.T)
    xi = _terminal(problem, X)
    g = problem.generator
    gen = lambda i, y, z: g(times[i], y, z)  # noqa: E731
    Y, Z, se_Y, se_Z, diag = _lsmc(times, X, dW, xi, gen, disc, _default_bound(disc, xi))
    diag["min_dphi"] = 1.0
    return _solution(times, X, Y, Z, se_Y, se_Z, diag)


def build_flow_table(spec: FlowSpec, times, bound: float, n_nodes: int) -> FlowTable:
    ys = np.linspace(-bound, bound, n_nodes)
    return FlowTable.build(spec, times, ys)


def solve_rough_qbsde(problem: BsdeProblem, disc: Discretization, _paths=None) -> BsdeSolution:
    """Doss-Sussmann route: solve the flow-conjugated BSDE and map back through the flow."""
    spec = problem.flow_spec()
    if spec is None or spec.identity:
        return solve_backward_lsmc(problem, disc, _paths)
    times, X, dW = _paths if _paths is not None else simulate_forward(problem.forward, disc, problem.T)
    xi = _terminal(problem, X)
    bound = _default_bound(disc, xi)
    table = build_flow_table(spec, times, bound, disc.table_nodes)
    g = problem.generator

    def gen(i, ytil, ztil):
        phi, dphi, d2phi = table.evaluate(i, ytil)
        return transformed_generator(g, times[i], ztil, phi, dphi, d2phi)

    # the flow is the identity at T, so the terminal value is unchanged
    Yt, Zt, se_Y, se_Z, diag = _lsmc(times, X, dW, xi, gen, disc, bound)
    Y = np.empty_like(Yt)
    Z = np.empty_like(Zt)
    for i in range(times.size):
        phi, dphi, _ = table.evaluate(i, Yt[:, i])
        Y[:, i] = phi
        if i < Zt.shape[1]:
            Z[:, i] = dphi * Zt[:, i]
            se_Z[i] *= float(np.mean(dphi))
    # phi(T, .) is the identity; keep the terminal slice free of interpolation rounding
    Y[:, -1] = xi
    y0t = float(Yt[:, 0].mean())
    phi0, dphi0, _ = table.evaluate(0, np.array([y0t]))
    se_Y = se_Y * np.array([float(np.mean(table.evaluate(i, Yt[:, i])[1])) for i in range(times.size)])
    diag.update({"min_dphi": table.stats["min_dphi"], "max_dphi": table.stats["max_dphi"],
                 "Ytil0": y0t})
    return _solution(times, X, Y, Z, se_Y, se_Z, diag, float(phi0[0]), float(se_Y[0]))


def solve_via_zvonkin(problem: BsdeProblem, disc: Discretization, L: float = 50.0,
                      reading: str = "compose", _paths=None) -> BsdeSolution:
    """Remove the f(y) z^2 term with u, solve the transformed rough BSDE, map back."""
    g = problem.generator
    if g.quadratic is None or g.residual is None:
        raise BsdeError("the Zvonkin route needs a generator of the form h(t,y,z) + f(y) z^2")
    zm = zvonkin_build(g.quadratic, L, reading=reading)
    residual = g.residual
    if g.quadratic.zero:
        tgen = g
    elif g.growth.a == g.growth.b == g.growth.c == 0:
        # h is dominated by zero, so the transformed generator vanishes
        tgen = Generator.zeros()
    else:
        tgen = Generator(zvonkin_residual_generator(zm, residual), name=f"zvonkin({g.name})")
    rough = problem.rough_part
    if rough is not None:
        rough = RoughPart(zvonkin_Gtilde(zm, rough.field), rough.driver, rough.steps, rough.rk_substeps)
    terminal = problem.terminal
    tproblem = BsdeProblem(lambda x: zm.u(terminal(x)), tgen, problem.forward, problem.T, rough)
    times, X, dW = _paths if _paths is not None else simulate_forward(problem.forward, disc, problem.T)
    sol = solve_rough_qbsde(tproblem, disc, (times, X, dW))
    if np.max(np.abs(sol.Y)) > zm.u_nodes[-1] or np.min(sol.Y) < zm.u_nodes[0]:
        raise ZvonkinRangeError(
            f"transformed Y range [{sol.Y.min():.4g}, {sol.Y.max():.4g}] leaves u([-{L}, {L}])")
    Y = zm.uinv(sol.Y)
    Y[:, -1] = _terminal(problem, X)
    up = zm.uprime(Y)
    Z = sol.Z / up[:, :-1]
    y0 = float(zm.uinv(np.array([sol.Y0]))[0])
    up0 = float(zm.uprime(np.array([y0]))[0])
    se_Y = sol.se_Y / up.mean(axis=0)
    se_Z = sol.se_Z / up[:, :-1].mean(axis=0)
    diag = dict(sol.diagnostics)
    diag.update({"zvonkin_norm": zm.norm, "zvonkin_reading": reading})
    return _solution(times, X, Y, Z, se_Y, se_Z, diag, y0, sol.Y0_se / up0)


# --------------------------------------------------------------------------
# output

def _fmt(v: float) -> str:
    return repr(float(v))


def write_solution_csv(sol: BsdeSolution, filename) -> None:
    rows = sol.summary()
    if not np.all(np.isfinite(rows)):
        raise BsdeError("non-finite values in the solution summary; refusing to write")
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mean_Y", "se_Y", "mean_Z", "se_Z"])
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_sidecar(filename, meta: dict) -> None:
    meta = dict(meta)
    meta.setdefault("written_at", datetime.datetime.now(datetime.timezone.utc).isoformat())
    with open(filename, "w") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={v}\n")


def solution_metadata(sol: BsdeSolution, disc: Discretization, **extra) -> dict:
    meta = {"seed": disc.seed, "n_paths": disc.n_paths, "n_steps": disc.n_steps, "basis": disc.basis,
            "Y0": _fmt(sol.Y0), "Y0_se": _fmt(sol.Y0_se)}
    meta.update({k: (_fmt(v) if isinstance(v, float) else v) for k, v in sol.diagnostics.items()})
    meta.update(extra)
    return meta
