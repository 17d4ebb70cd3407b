"""Scenario descriptions (plain dicts, JSON-compatible) and their runners.

A scenario names a ``kind``.  ``bsde`` scenarios assemble a problem from the
symbolic menus below and solve it by one or both routes; the other kinds are
self-contained numerical checks.  Every runner returns a list of ``Check``
rows and writes its artifacts into the scenario's output directory.
"""
from __future__ import annotations

import copy
import csv
import filecmp
import math
import os
import tempfile
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import bsde as B
from . import pde as P
from . import rough_path as R
from .flows import FlowSpec, VectorField, solve_ode_flow, solve_rde_flow, write_flow_csv
from .transforms import Generator, IntegrableFunction, write_zvonkin_csv, zvonkin_build

KINDS = ("bsde", "flow_exactness", "ode_rde", "zvonkin_structure", "levy_area", "fbm_lift", "bdsde")
ROUTES = ("doss_sussmann", "zvonkin", "both")


class ScenarioError(ValueError):
    pass


@dataclass
class Check:
    scenario: str
    check: str
    value: float
    reference: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return (f"{status} {self.scenario}/{self.check}: value={self.value:.6g} "
                f"reference={self.reference:.6g} tol={self.tolerance:.3g}{extra}")


@dataclass
class Options:
    out: str
    seed: Optional[int] = None
    threads: int = 1
    dump_flow: bool = False
    dump_zvonkin: bool = False


def _check(name, check, value, reference, tol, detail="", kind="abs"):
    value, reference = float(value), float(reference)
    if kind == "abs":
        ok = abs(value - reference) <= tol
    elif kind == "le":
        ok = value <= reference + tol
    else:
        raise ValueError(kind)
    ok = ok and math.isfinite(value)
    return Check(name, check, value, reference, float(tol), bool(ok), detail)


# --------------------------------------------------------------------------
# symbolic menus

def build_f(spec) -> IntegrableFunction:
    spec = spec or {"type": "zero"}
    t = spec.get("type", "zero")
    if t == "zero":
        return IntegrableFunction.zeros()
    if t == "truncated_constant":
        return IntegrableFunction.truncated_constant(spec["c"], spec.get("K", 10.0))
    if t == "indicator":
        return IntegrableFunction.indicator(spec["c"], spec["a"], spec["b"])
    if t == "gaussian":
        return IntegrableFunction.gaussian(spec["c"], spec.get("scale", 1.0))
    raise ScenarioError(f"unknown f type {t!r}")


def build_generator(spec) -> Generator:
    spec = spec or {"type": "zero"}
    t = spec.get("type", "zero")
    if t == "zero":
        return Generator.zeros()
    if t == "linear":
        return Generator.linear(spec["alpha"])
    if t == "quad":
        return Generator.quadratic_in_z(build_f(spec.get("f")))
    if t == "mixed":
        return Generator.mixed(spec.get("a", 0.0), spec.get("b", 0.0), spec.get("c", 0.0), build_f(spec.get("f")))
    raise ScenarioError(f"unknown generator type {t!r}")


def build_field(spec, d: int) -> VectorField:
    spec = spec or {"type": "zero"}
    t = spec.get("type", "zero")
    if t == "zero":
        return VectorField.zeros(d)
    if t == "constant":
        return VectorField.constant(spec["values"])
    if t == "linear":
        return VectorField.linear(spec["slopes"])
    if t == "affine":
        return VectorField.affine(spec["offsets"], spec["slopes"])
    if t == "sine":
        return VectorField.sine(spec["amplitudes"], spec["frequencies"], spec.get("phases"))
    raise ScenarioError(f"unknown vector field type {t!r}")


def smooth_driver(components, T: float = 1.0) -> R.SmoothPath:
    """eta^k(s) = sum_j poly_j s^j + amp sin(2 pi freq s), shifted to start at 0."""
    comps = []
    for c in components:
        poly = np.asarray(c.get("poly", [0.0]), dtype=float)
        amp, freq = c.get("sin", [0.0, 0.0])
        comps.append((poly, float(amp), float(freq)))
    w = 2 * math.pi

    def value(t):
        cols = [np.polynomial.polynomial.polyval(t, p) - p[0] + a * np.sin(w * f * t) for p, a, f in comps]
        return np.stack(cols, axis=-1)

    def deriv(t):
        cols = []
        for p, a, f in comps:
            dp = np.polynomial.polynomial.polyder(p) if p.size > 1 else np.zeros(1)
            cols.append(np.polynomial.polynomial.polyval(t, dp) + a * w * f * np.cos(w * f * t))
        return np.stack(cols, axis=-1)

    return R.SmoothPath(value, deriv, float(T), len(comps), np.array([0.0, float(T)]))


def driver_dimension(spec) -> int:
    t = spec.get("type", "smooth")
    if t == "smooth":
        return len(spec["components"])
    if t == "file":
        return R.read_rough_path_csv(spec["path"]).d
    return int(spec.get("d", 1))


def build_driver(spec, T: float, seed: int):
    t = spec.get("type", "smooth")
    if t == "smooth":
        return smooth_driver(spec["components"], T)
    if t == "brownian":
        grid = R.dyadic_grid(spec.get("level", 8), T)
        return R.brownian_lift(spec.get("seed", seed), grid, spec.get("d", 2), spec.get("subfactor", 16),
                               spec.get("p", 2.5), spec.get("sample", 0))
    if t == "fbm":
        grid = R.dyadic_grid(spec.get("grid_level", 6), T)
        return R.fbm_lift(spec.get("seed", seed), spec["H"], grid, spec.get("d", 1), spec.get("level", 8),
                          spec.get("p"), spec.get("sample", 0))
    if t == "file":
        path = R.read_rough_path_csv(spec["path"], spec.get("p"))
        if abs(path.T - T) > 1e-12:
            raise ScenarioError(f"rough path file ends at {path.T}, expected {T}")
        return path
    raise ScenarioError(f"unknown driver type {t!r}")


def build_terminal(spec) -> Callable:
    spec = spec or {"type": "identity"}
    t = spec.get("type", "identity")
    if t == "identity":
        return lambda x: np.asarray(x, dtype=float).copy()
    if t == "linear":
        a, b = float(spec.get("slope", 1.0)), float(spec.get("intercept", 0.0))
        return lambda x: a * np.asarray(x, dtype=float) + b
    if t == "square":
        return lambda x: np.asarray(x, dtype=float) ** 2
    if t == "call":
        k = float(spec.get("strike", 0.0))
        return lambda x: np.maximum(np.asarray(x, dtype=float) - k, 0.0)
    if t == "sin":
        return lambda x: np.sin(np.asarray(x, dtype=float))
    raise ScenarioError(f"unknown terminal type {t!r}")


def build_forward(spec) -> B.ForwardModel:
    spec = spec or {}
    if spec.get("type", "arithmetic") == "ou":
        return B.ForwardModel.ornstein_uhlenbeck(spec["kappa"], spec.get("theta", 0.0), spec.get("sigma", 1.0),
                                                 spec.get("x0", 0.0))
    return B.ForwardModel.arithmetic(spec.get("mu", 0.0), spec.get("sigma", 1.0), spec.get("x0", 0.0))


def build_discretization(spec, opts: Options, seed: Optional[int] = None) -> B.Discretization:
    spec = dict(spec or {})
    if seed is not None:
        spec["seed"] = seed
    elif opts.seed is not None:
        spec["seed"] = opts.seed
    spec["threads"] = opts.threads
    keys = {"n_steps", "n_paths", "basis", "seed", "truncation", "threads", "table_nodes"}
    return B.Discretization(**{k: v for k, v in spec.items() if k in keys})


def build_problem(sc, seed: int) -> B.BsdeProblem:
    T = float(sc.get("T", 1.0))
    rough = None
    drv = sc.get("driver")
    field_spec = sc.get("field", {"type": "zero"})
    if drv is not None and field_spec.get("type", "zero") != "zero":
        driver = build_driver(drv, T, seed)
        rough = B.RoughPart(build_field(field_spec, driver.d), driver, sc.get("flow_steps", 1000),
                            sc.get("rk_substeps", 2))
    return B.BsdeProblem(build_terminal(sc.get("terminal")), build_generator(sc.get("generator")),
                         build_forward(sc.get("forward")), T, rough)


# --------------------------------------------------------------------------
# validation

def validate(sc) -> list[str]:
    """Problems with a scenario that can be detected without running it."""
    errs = []
    name = sc.get("name", "<unnamed>")
    kind = sc.get("kind", "bsde")
    if kind not in KINDS:
        return [f"{name}: unknown kind {kind!r} (expected one of {', '.join(KINDS)})"]
    drivers = [sc.get("driver")] if sc.get("driver") else []
    drivers += [sc[k] for k in ("fbm",) if isinstance(sc.get(k), dict)]
    if kind == "fbm_lift":
        drivers.append({"type": "fbm", "H": sc.get("H", 0.35), "p": sc.get("p")})
    for drv in drivers:
        t = drv.get("type", "smooth")
        if t == "fbm":
            H = float(drv.get("H", 0.0))
            if not H > 0.25:
                errs.append(f"{name}: fBm driver requires H > 1/4, got H={H}")
            elif drv.get("p") is not None and H * float(drv["p"]) <= 1:
                errs.append(f"{name}: fBm driver requires H*p > 1, got H={H}, p={drv['p']}")
        elif t == "file":
            if not os.path.exists(drv.get("path", "")):
                errs.append(f"{name}: rough path file {drv.get('path')!r} does not exist")
        elif t == "brownian":
            level = drv.get("level", 8)
            steps = sc.get("discretization", {}).get("n_steps", 50)
            if kind == "bsde" and (2 ** level) % steps:
                errs.append(f"{name}: BSDE steps ({steps}) must divide the driver's 2^{level} cells")
        elif t != "smooth":
            errs.append(f"{name}: unknown driver type {t!r}")
    if kind == "bsde":
        route = sc.get("route", "doss_sussmann")
        if route not in ROUTES:
            errs.append(f"{name}: unknown route {route!r}")
        gen = (sc.get("generator") or {}).get("type", "zero")
        if route in ("zvonkin", "both") and gen not in ("zero", "quad", "mixed"):
            errs.append(f"{name}: route {route} needs a generator of the form a+b|y|+c|z|+f(y)z^2, got {gen!r}")
        try:
            build_generator(sc.get("generator"))
            build_terminal(sc.get("terminal"))
            build_discretization(sc.get("discretization"), Options(out="."))
            drv = sc.get("driver")
            if drv and not (drv.get("type") == "file" and not os.path.exists(drv.get("path", ""))):
                d = driver_dimension(drv)
                fd = build_field(sc.get("field"), d).d
                if fd != d:
                    errs.append(f"{name}: vector field has {fd} components but the driver has dimension {d}")
        except (ScenarioError, ValueError, KeyError, TypeError) as exc:
            errs.append(f"{name}: {type(exc).__name__}: {exc}")
    return errs


# --------------------------------------------------------------------------
# runners

def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _write_solution(sol, disc, out_dir, route, name):
    B.write_solution_csv(sol, os.path.join(out_dir, f"solution_{route}.csv"))
    B.write_sidecar(os.path.join(out_dir, f"metadata_{route}.txt"),
                    B.solution_metadata(sol, disc, scenario=name, route=route))


def _solve_routes(sc, problem, disc, paths):
    route = sc.get("route", "doss_sussmann")
    sols = {}
    if route in ("doss_sussmann", "both"):
        sols["doss_sussmann"] = B.solve_rough_qbsde(problem, disc, paths)
    if route in ("zvonkin", "both"):
        sols["zvonkin"] = B.solve_via_zvonkin(problem, disc, sc.get("zvonkin_L", 50.0), _paths=paths)
    return sols


def run_bsde(sc, opts: Options, out_dir: str) -> list[Check]:
    name = sc["name"]
    disc = build_discretization(sc.get("discretization"), opts)
    problem = build_problem(sc, disc.seed)
    checks = []

    def solve():
        paths = B.simulate_forward(problem.forward, disc, problem.T)
        return _solve_routes(sc, problem, disc, paths)

    sols, elapsed = _timed(solve)
    for route, sol in sols.items():
        _write_solution(sol, disc, out_dir, route, name)
    if opts.dump_flow and problem.rough_part is not None:
        write_flow_csv(problem.flow_spec(), problem.forward.x0, os.path.join(out_dir, "flow.csv"))
    quad = problem.generator.quadratic
    if opts.dump_zvonkin and quad is not None and not quad.zero:
        write_zvonkin_csv(zvonkin_build(problem.generator.quadratic, sc.get("zvonkin_L", 50.0)),
                          os.path.join(out_dir, "zvonkin.csv"))
    main = next(iter(sols.values()))
    for oracle in sc.get("oracles", []):
        t = oracle["type"]
        if t == "value":
            for route, sol in sols.items():
                checks.append(_check(name, f"Y0[{route}]", sol.Y0, oracle["target"], oracle["tol"],
                                     f"se={sol.Y0_se:.3g}"))
        elif t == "value_se":
            for route, sol in sols.items():
                tol = max(3 * sol.Y0_se, oracle.get("tol", 0.0))
                checks.append(_check(name, f"Y0[{route}]", sol.Y0, oracle["target"], tol, f"se={sol.Y0_se:.3g}"))
        elif t == "z_mean":
            for route, sol in sols.items():
                checks.append(_check(name, f"Z_t0_mean[{route}]", sol.Z[:, 0].mean(), oracle["target"],
                                     oracle["tol"], f"all-slice mean {sol.Z.mean():.4g}"))
        elif t == "route_agreement":
            if set(sols) != {"doss_sussmann", "zvonkin"}:
                raise ScenarioError(f"{name}: route agreement needs route 'both'")
            a, b = sols["doss_sussmann"], sols["zvonkin"]
            checks.append(_check(name, "route_agreement", a.Y0 - b.Y0, 0.0, oracle["tol"],
                                 f"DS {a.Y0:.5f} ZV {b.Y0:.5f}"))
        elif t == "finite":
            ok = all(np.all(np.isfinite(s.Y)) and np.all(np.isfinite(s.Z)) for s in sols.values())
            checks.append(Check(name, "finite", float(ok), 1.0, 0.0, bool(ok)))
        elif t == "runtime":
            checks.append(_check(name, "runtime_s", elapsed, oracle["max_seconds"], 0.0, kind="le"))
        elif t == "seed_agreement":
            other = build_discretization(sc.get("discretization"), opts, seed=oracle["seed"])
            if other.seed == disc.seed:
                raise ScenarioError(f"{name}: seed agreement needs two different seeds")
            sol2 = B.solve_rough_qbsde(problem, other) if "doss_sussmann" in sols else \
                B.solve_via_zvonkin(problem, other, sc.get("zvonkin_L", 50.0))
            se = math.hypot(main.Y0_se, sol2.Y0_se)
            checks.append(_check(name, "seed_agreement", main.Y0 - sol2.Y0, 0.0, 3 * se,
                                 f"seeds {disc.seed},{other.seed}: {main.Y0:.5f} vs {sol2.Y0:.5f}"))
        elif t == "determinism":
            checks.append(_determinism(sc, opts, oracle.get("threads", [1, 4])))
        else:
            raise ScenarioError(f"{name}: unknown oracle type {t!r}")
    if "fd_check" in sc:
        checks += _fd_check(sc, problem, disc, out_dir)
    return checks


def _determinism(sc, opts: Options, thread_counts) -> Check:
    """Rerun with different worker counts and compare solution CSV bytes."""
    sc = copy.deepcopy(sc)
    sc["oracles"] = []
    sc.pop("fd_check", None)
    with tempfile.TemporaryDirectory() as tmp:
        dirs = []
        for k in thread_counts:
            d = os.path.join(tmp, f"threads{k}")
            os.makedirs(d)
            run_bsde(sc, Options(d, opts.seed, k), d)
            dirs.append(d)
        names = sorted(f for f in os.listdir(dirs[0]) if f.startswith("solution_"))
        same = bool(names) and all(filecmp.cmp(os.path.join(dirs[0], f), os.path.join(d, f), shallow=False)
                                   for d in dirs[1:] for f in names)
    return Check(sc["name"], "byte_identical_csv", float(same), 1.0, 0.0, same,
                 f"threads {','.join(map(str, thread_counts))}")


def _fd_check(sc, problem, disc, out_dir) -> list[Check]:
    name = sc["name"]
    cfg = sc["fd_check"]
    nt, nx = cfg.get("nt", 200), cfg.get("nx", 200)
    fw = sc.get("forward") or {}
    pde, table = P.rough_pde_problem(problem, nt, sigma_scale=fw.get("sigma", 1.0))
    (v_u, elapsed) = _timed(lambda: _fd_solve(pde, table, nt, nx))
    v, u = v_u
    P.write_pde_csv(u, os.path.join(out_dir, "pde.csv"))
    rows, checks = [], []
    t0 = time.perf_counter()
    for x in cfg["points"]:
        est, se = P.feynman_kac_mc(0.0, x, problem, disc)
        fd = float(u.at(0.0, x))
        rows.append((x, est, se, fd))
        checks.append(_check(name, f"mc_vs_fd[x={x:g}]", est, fd, max(3 * se, cfg.get("tol", 2e-2)),
                             f"se={se:.3g}"))
    total = elapsed + time.perf_counter() - t0
    P.write_comparison_csv(rows, os.path.join(out_dir, "comparison.csv"))
    if "max_seconds" in cfg:
        checks.append(_check(name, "fd_mc_runtime_s", total, cfg["max_seconds"], 0.0, kind="le"))
    return checks


def _fd_solve(pde, table, nt, nx):
    v = P.solve_fd_semilinear(pde, nt, nx)
    u = v if table is None else P.compose_rough_solution(v, table)
    return v, u


def run_flow_exactness(sc, opts, out_dir) -> list[Check]:
    name = sc["name"]
    spec = FlowSpec(VectorField.linear([1.0]), smooth_driver([{"poly": [0.0, 1.0]}]), steps=sc.get("steps", 1000))
    val, elapsed = _timed(lambda: solve_ode_flow(spec, 0.0, 1.0))
    if opts.dump_flow:
        write_flow_csv(spec, 1.0, os.path.join(out_dir, "flow.csv"))
    tol = sc.get("tol", 1e-8)
    return [_check(name, "phi(0,1)", val.phi, math.e, tol),
            _check(name, "dphi(0,1)", val.dphi, math.e, tol),
            _check(name, "runtime_s", elapsed, sc.get("max_seconds", 1.0), 0.0, kind="le")]


ODE_RDE_PATH = [{"sin": [1.0, 1.0]}, {"poly": [0.0, 0.0, 1.0]}]


def ode_rde_differences(levels, ys=(-1.0, -0.5, 0.0, 0.5, 1.0), components=None, ref_steps: int = 4096):
    """Max |RDE - ODE| over phi, dphi and the sample points, per dyadic level."""
    eta = smooth_driver(components or ODE_RDE_PATH)
    field = VectorField.affine([1.0, 0.0], [0.0, 1.0])
    ys = np.asarray(ys)
    ref = solve_ode_flow(FlowSpec(field, eta, steps=ref_steps), 0.0, ys)
    out = []
    for L in levels:
        rp = R.lift_smooth_path(eta, R.dyadic_grid(L), degree=2)
        v = solve_rde_flow(FlowSpec(field, rp, rk_substeps=1), 0.0, ys)
        out.append(float(max(np.max(np.abs(v.phi - ref.phi)), np.max(np.abs(v.dphi - ref.dphi)))))
    return out


def run_ode_rde(sc, opts, out_dir) -> list[Check]:
    name = sc["name"]
    levels = list(range(sc.get("min_level", 6), sc.get("max_level", 10) + 1))
    diffs, elapsed = _timed(lambda: ode_rde_differences(levels))
    _write_rows(os.path.join(out_dir, "ode_rde.csv"), ["level", "max_difference"], zip(levels, diffs))
    decreasing = all(b < a for a, b in zip(diffs, diffs[1:]))
    return [_check(name, f"max_diff[level={levels[-1]}]", diffs[-1], 0.0, sc.get("tol", 1e-4), kind="le"),
            Check(name, "strictly_decreasing", float(decreasing), 1.0, 0.0, decreasing,
                  " > ".join(f"{d:.3g}" for d in diffs)),
            _check(name, "runtime_s", elapsed, sc.get("max_seconds", 10.0), 0.0, kind="le")]


def zvonkin_structure(c: float = 0.5, a: float = 0.0, b: float = 1.0, seed: int = 0, n_pairs: int = 100):
    """Closed-form value, ODE residual and quasi-isometry ratios for f = c 1_[a,b]."""
    f = IntegrableFunction.indicator(c, a, b)
    zm = zvonkin_build(f)
    u1 = float(zm.u(np.array(b)))
    exact_u1 = (math.exp(2 * c * (b - a)) - 1) / (2 * c) if a == 0 else math.nan
    h = 1e-4
    xs = np.linspace(-3.0, 4.0, 1401)
    xs = xs[np.min(np.abs(xs[:, None] - np.array([a, b])[None, :]), axis=1) > 2 * h]
    resid = float(np.max(np.abs((zm.u(xs + h) - 2 * zm.u(xs) + zm.u(xs - h)) / h ** 2 - 2 * f(xs) * zm.uprime(xs))))
    rng = np.random.default_rng(seed)
    p, q = rng.uniform(-5, 5, (2, n_pairs))
    ratio = np.abs(zm.u(p) - zm.u(q)) / np.abs(p - q)
    return zm, u1, exact_u1, resid, float(ratio.min()), float(ratio.max())


def run_zvonkin_structure(sc, opts, out_dir) -> list[Check]:
    name = sc["name"]
    zm, u1, exact, resid, rmin, rmax = zvonkin_structure(sc.get("c", 0.5), 0.0, sc.get("b", 1.0), sc.get("seed", 0))
    write_zvonkin_csv(zm, os.path.join(out_dir, "zvonkin.csv"))
    k = math.exp(2 * zm.norm)
    return [_check(name, "u(1)", u1, exact, sc.get("tol", 1e-8)),
            _check(name, "ode_residual", resid, 0.0, 1e-5, kind="le"),
            Check(name, "quasi_isometry_lower", rmin, 1 / k, 0.0, rmin >= 1 / k * (1 - 1e-12),
                  "min |u(x)-u(y)|/|x-y| >= exp(-2|f|_1)"),
            Check(name, "quasi_isometry_upper", rmax, k, 0.0, rmax <= k * (1 + 1e-12),
                  "max |u(x)-u(y)|/|x-y| <= exp(2|f|_1)")]


def levy_area_statistics(seed: int, n_samples: int, cells: int = 10, subfactor: int = 16, threads: int = 1):
    """Total area A^{12}_{0,1} per sample plus exactness diagnostics of the lift."""
    grid = np.linspace(0.0, 1.0, cells + 1)
    x1, x2, _ = R.brownian_lift_batch(seed, grid, 2, subfactor, 0, n_samples, threads=threads)
    t1, t2 = x1[:, 0], x2[:, 0]
    for k in range(1, cells):
        t1, t2, _ = R._concat(t1, t2, None, x1[:, k], x2[:, k], None)
    area = 0.5 * (t2[:, 0, 1] - t2[:, 1, 0])
    log2 = R._log(t1, t2, None)[1]
    antisym = float(np.max(np.abs(log2 + np.swapaxes(log2, -1, -2))))
    sym_err = float(np.max(np.abs(0.5 * (t2 + np.swapaxes(t2, -1, -2)) - 0.5 * t1[:, :, None] * t1[:, None, :])))
    path = R.brownian_lift(seed, grid, 2, subfactor)
    chen = 0.0
    total = path.total()
    for k in range(1, cells):
        c = R.chen_concat(path.increment_between(0, k), path.increment_between(k, cells))
        chen = max(chen, float(np.max(np.abs(c.level2 - total.level2))), float(np.max(np.abs(c.level1 - total.level1))))
    return area, antisym, sym_err, chen


def run_levy_area(sc, opts, out_dir) -> list[Check]:
    name = sc["name"]
    n = sc.get("n_samples", 100_000)
    seed = opts.seed if opts.seed is not None else sc.get("seed", 7)
    area, antisym, sym_err, chen = levy_area_statistics(seed, n, sc.get("cells", 10), sc.get("subfactor", 16),
                                                        opts.threads)
    var = float(area.var(ddof=1))
    _write_rows(os.path.join(out_dir, "levy_area.csv"), ["statistic", "value"],
                [("n_samples", n), ("mean", float(area.mean())), ("variance", var),
                 ("antisymmetry_defect", antisym), ("symmetric_part_defect", sym_err), ("chen_defect", chen)])
    return [_check(name, "area_variance", var, 0.25, 0.05 * 0.25),
            _check(name, "antisymmetry_defect", antisym, 0.0, 0.0, kind="le"),
            _check(name, "symmetric_part_defect", sym_err, 0.0, 1e-12, kind="le"),
            _check(name, "chen_defect", chen, 0.0, 1e-12, kind="le")]


def fbm_covariance_check(seed: int, H: float, pairs, n_samples: int, level: int = 6):
    """Empirical E[B_s B_t] with standard errors, from the sampler behind the lift."""
    times = R.dyadic_grid(level)
    chol = R.fbm_cholesky(times[1:], H)
    vals = R.fbm_sample_values(seed, H, times, 1, 0, n_samples, chol)[:, :, 0]
    out = []
    for s, t in pairs:
        i, j = int(round(s * 2 ** level)), int(round(t * 2 ** level))
        prod = vals[:, i] * vals[:, j]
        out.append((s, t, float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(n_samples)),
                    float(R.fbm_covariance(s, t, H))))
    return out


def run_fbm_lift(sc, opts, out_dir) -> list[Check]:
    name = sc["name"]
    H, p = sc.get("H", 0.35), sc.get("p", 3.5)
    seed = opts.seed if opts.seed is not None else sc.get("seed", 11)
    checks = []
    try:
        path = R.fbm_lift(seed, H, R.dyadic_grid(sc.get("grid_level", 6)), sc.get("d", 2), sc.get("level", 10), p)
        ok = path.degree == 3 and np.all(np.isfinite(path.level3))
        R.write_rough_path_csv(path, os.path.join(out_dir, "fbm_path.csv"))
        checks.append(Check(name, "lift_degree3", float(path.degree), 3.0, 0.0, bool(ok), f"H={H}, p={p}"))
    except R.RoughPathError as exc:
        checks.append(Check(name, "lift_degree3", math.nan, 3.0, 0.0, False, str(exc)))
    pairs = sc.get("pairs", [[0.25, 0.5], [0.5, 1.0], [0.75, 0.75]])
    rows = fbm_covariance_check(seed, H, pairs, sc.get("n_samples", 20_000))
    _write_rows(os.path.join(out_dir, "fbm_covariance.csv"), ["s", "t", "empirical", "se", "exact"], rows)
    for s, t, emp, se, exact in rows:
        checks.append(_check(name, f"cov({s:g},{t:g})", emp, exact, 3 * se, f"se={se:.3g}"))
    bad_H = sc.get("rejected_H", 0.2)
    try:
        R.fbm_lift(seed, bad_H, R.dyadic_grid(4), 1, 6)
        checks.append(Check(name, f"rejects_H={bad_H}", 0.0, 1.0, 0.0, False, "no error raised"))
    except R.RoughPathError as exc:
        ok = "H > 1/4" in str(exc)
        checks.append(Check(name, f"rejects_H={bad_H}", float(ok), 1.0, 0.0, ok, str(exc)))
    return checks


def run_bdsde(sc, opts, out_dir) -> list[Check]:
    """Brownian rough driver versus the ODE route on its piecewise-linear interpolation."""
    name = sc["name"]
    disc = build_discretization(sc.get("discretization"), opts)
    drv = sc["driver"]
    problem = build_problem(sc, disc.seed)
    level, sub = drv.get("level", 8), drv.get("subfactor", 16)
    fine_t, fine_v = R.brownian_sample_path(drv.get("seed", disc.seed), R.dyadic_grid(level, problem.T),
                                            drv.get("d", 2), sub, drv.get("sample", 0))
    smooth = R.SmoothPath.from_piecewise_linear(fine_t, fine_v)
    rp = problem.rough_part
    smooth_problem = B.BsdeProblem(problem.terminal, problem.generator, problem.forward, problem.T,
                                   B.RoughPart(rp.field, smooth, steps=fine_t.size - 1))
    paths = B.simulate_forward(problem.forward, disc, problem.T)
    rough_sol = B.solve_rough_qbsde(problem, disc, paths)
    smooth_sol = B.solve_rough_qbsde(smooth_problem, disc, paths)
    _write_solution(rough_sol, disc, out_dir, "doss_sussmann", name)
    _write_solution(smooth_sol, disc, out_dir, "ode_interpolation", name)
    return [_check(name, "rough_vs_interpolated_ode", rough_sol.Y0, smooth_sol.Y0, sc.get("tol", 5e-2),
                   f"level {level}")]


RUNNERS = {"bsde": run_bsde, "flow_exactness": run_flow_exactness, "ode_rde": run_ode_rde,
           "zvonkin_structure": run_zvonkin_structure, "levy_area": run_levy_area, "fbm_lift": run_fbm_lift,
           "bdsde": run_bdsde}


def run_scenario(sc, opts: Options) -> list[Check]:
    out_dir = os.path.join(opts.out, sc["name"])
    os.makedirs(out_dir, exist_ok=True)
    return RUNNERS[sc.get("kind", "bsde")](sc, opts, out_dir)


def _write_rows(filename, header, rows):
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            vals = list(r)
            if any(isinstance(v, float) and not math.isfinite(v) for v in vals):
                raise ScenarioError(f"non-finite value in {filename}; refusing to write")
            w.writerow([repr(v) if isinstance(v, float) else v for v in vals])


# --------------------------------------------------------------------------
# built-in library

def _cole_hopf(name="cole_hopf", seed=20240501, extra=()):
    return {
        "name": name, "kind": "bsde",
        "generator": {"type": "quad", "f": {"type": "truncated_constant", "c": 0.25, "K": 10.0}},
        "terminal": {"type": "identity"}, "forward": {"mu": 0.0, "sigma": 1.0, "x0": 0.0}, "T": 1.0,
        "discretization": {"n_steps": 50, "n_paths": 10_000, "basis": "poly4", "seed": seed},
        "route": "doss_sussmann",
        "oracles": [{"type": "value", "target": 0.25, "tol": 5e-2}, {"type": "z_mean", "target": 1.0, "tol": 5e-2},
                    {"type": "runtime", "max_seconds": 60.0}, *extra],
    }


def linear_flow_cole_hopf(lam: float, c: float, x0: float = 0.0, T: float = 1.0) -> float:
    """Y_0 for g = c z^2, G(y) = lam y, eta_s = s, psi(x) = x, X = x0 + W."""
    e = math.exp(lam * T)
    return e * (x0 + c * (e - 1) / lam)


BUILTINS = {
    "flow_exactness": {"name": "flow_exactness", "kind": "flow_exactness", "steps": 1000, "tol": 1e-8,
                       "max_seconds": 1.0},
    "ode_rde_consistency": {"name": "ode_rde_consistency", "kind": "ode_rde", "min_level": 6, "max_level": 10,
                            "tol": 1e-4, "max_seconds": 10.0},
    "zvonkin_structure": {"name": "zvonkin_structure", "kind": "zvonkin_structure", "c": 0.5, "b": 1.0,
                          "tol": 1e-8},
    "cole_hopf": _cole_hopf(),
    "route_agreement": {
        "name": "route_agreement", "kind": "bsde",
        "generator": {"type": "quad", "f": {"type": "truncated_constant", "c": 0.25, "K": 10.0}},
        "field": {"type": "linear", "slopes": [0.2]},
        "driver": {"type": "smooth", "components": [{"poly": [0.0, 1.0]}]},
        "terminal": {"type": "identity"}, "forward": {"mu": 0.0, "sigma": 1.0, "x0": 0.0}, "T": 1.0,
        "discretization": {"n_steps": 50, "n_paths": 10_000, "basis": "poly4", "seed": 314159},
        "route": "both",
        "oracles": [{"type": "route_agreement", "tol": 1e-2},
                    {"type": "value_se", "target": linear_flow_cole_hopf(0.2, 0.25), "tol": 2e-2}],
    },
    "feynman_kac": {
        "name": "feynman_kac", "kind": "bsde",
        "generator": {"type": "quad", "f": {"type": "truncated_constant", "c": 0.25, "K": 10.0}},
        "field": {"type": "sine", "amplitudes": [0.5], "frequencies": [1.0], "phases": [0.3]},
        "driver": {"type": "smooth", "components": [{"sin": [0.5, 1.0]}]},
        "terminal": {"type": "identity"}, "forward": {"mu": 0.0, "sigma": 1.0, "x0": 0.0}, "T": 1.0,
        "discretization": {"n_steps": 50, "n_paths": 10_000, "basis": "poly4", "seed": 271828},
        "route": "doss_sussmann",
        "oracles": [{"type": "finite"}],
        "fd_check": {"points": [-1.0, -0.5, 0.0, 0.5, 1.0], "nt": 200, "nx": 200, "tol": 2e-2,
                     "max_seconds": 300.0},
    },
    "levy_area": {"name": "levy_area", "kind": "levy_area", "n_samples": 100_000, "cells": 10, "subfactor": 16,
                  "seed": 7},
    "fbm_lift": {"name": "fbm_lift", "kind": "fbm_lift", "H": 0.35, "p": 3.5, "d": 2, "level": 10,
                 "grid_level": 6, "n_samples": 20_000, "pairs": [[0.25, 0.5], [0.5, 1.0], [0.75, 0.75]],
                 "rejected_H": 0.2, "seed": 11},
    "determinism": _cole_hopf("determinism", extra=()) | {
        "oracles": [{"type": "determinism", "threads": [1, 4]}]},
    "uniqueness_seeds": _cole_hopf("uniqueness_seeds") | {
        "oracles": [{"type": "seed_agreement", "seed": 987654321}]},
    # demonstrations outside the acceptance list
    "bdsde": {
        "name": "bdsde", "kind": "bdsde",
        "generator": {"type": "quad", "f": {"type": "truncated_constant", "c": 0.25, "K": 10.0}},
        "field": {"type": "sine", "amplitudes": [0.3, 0.3], "frequencies": [1.0, 1.0], "phases": [0.0, 1.0]},
        "driver": {"type": "brownian", "d": 2, "level": 8, "subfactor": 16, "seed": 5},
        "terminal": {"type": "identity"}, "forward": {"mu": 0.0, "sigma": 1.0, "x0": 0.0}, "T": 1.0,
        "discretization": {"n_steps": 32, "n_paths": 5000, "basis": "poly4", "seed": 17},
        "tol": 5e-2,
    },
    "fbm_bsde": {
        "name": "fbm_bsde", "kind": "bsde",
        "generator": {"type": "mixed", "a": 0.1, "b": 0.0, "c": 0.2,
                      "f": {"type": "gaussian", "c": 0.3, "scale": 2.0}},
        "field": {"type": "sine", "amplitudes": [0.3], "frequencies": [1.0], "phases": [0.5]},
        "driver": {"type": "fbm", "H": 0.35, "p": 3.5, "d": 1, "level": 10, "grid_level": 6, "seed": 3},
        "terminal": {"type": "call", "strike": 0.0}, "forward": {"mu": 0.0, "sigma": 1.0, "x0": 0.0}, "T": 1.0,
        "discretization": {"n_steps": 32, "n_paths": 5000, "basis": "pwl20", "seed": 9},
        "route": "both",
        "oracles": [{"type": "finite"}, {"type": "route_agreement", "tol": 5e-2}],
    },
    "linear_bsde": {
        "name": "linear_bsde", "kind": "bsde", "generator": {"type": "linear", "alpha": 1.0},
        "terminal": {"type": "identity"}, "forward": {"mu": 0.0, "sigma": 0.2, "x0": 1.0}, "T": 1.0,
        "discretization": {"n_steps": 10, "n_paths": 2000, "basis": "poly2", "seed": 1},
        "oracles": [{"type": "value_se", "target": math.e, "tol": 0.15}],
        "study": {"reference": math.e},
    },
    "zero_generator": {
        "name": "zero_generator", "kind": "bsde", "generator": {"type": "zero"},
        "terminal": {"type": "identity"}, "forward": {"mu": 0.0, "sigma": 1.0, "x0": 0.0}, "T": 1.0,
        "discretization": {"n_steps": 10, "n_paths": 2000, "basis": "poly2", "seed": 1},
        "oracles": [{"type": "value_se", "target": 0.0, "tol": 0.0}],
        "study": {"reference": 0.0},
    },
}

ACCEPTANCE = ["flow_exactness", "ode_rde_consistency", "zvonkin_structure", "cole_hopf", "route_agreement",
              "feynman_kac", "levy_area", "fbm_lift", "determinism", "uniqueness_seeds"]


def builtin(name: str) -> dict:
    if name not in BUILTINS:
        raise ScenarioError(f"unknown built-in scenario {name!r}")
    return copy.deepcopy(BUILTINS[name])


def resolve(entry) -> dict:
    """A config entry is a full scenario or ``{"builtin": name, ...overrides}``."""
    if "builtin" in entry:
        sc = builtin(entry["builtin"])
        sc.update({k: v for k, v in entry.items() if k != "builtin"})
        return sc
    if "name" not in entry:
        raise ScenarioError("every scenario needs a name")
    return copy.deepcopy(entry)


# --------------------------------------------------------------------------
# convergence studies

def study(sc, levels: int, opts: Options):
    """Rows (level, n_steps, n_paths, lift_level, value, reference, error)."""
    kind = sc.get("kind", "bsde")
    rows = []
    if kind == "ode_rde":
        start = sc.get("min_level", 6)
        lv = list(range(start, start + levels))
        for L, diff in zip(lv, ode_rde_differences(lv)):
            rows.append((L - start, 0, 0, L, diff, 0.0, diff))
        return rows
    if kind != "bsde" or "study" not in sc:
        raise ScenarioError(f"{sc['name']}: no convergence study defined (needs a 'study' section)")
    cfg = sc["study"]
    ref = float(cfg["reference"])
    fac_n, fac_m = cfg.get("steps_factor", 2), cfg.get("paths_factor", 4)
    for k in range(levels):
        s = copy.deepcopy(sc)
        d = s.setdefault("discretization", {})
        d["n_steps"] = d.get("n_steps", 50) * fac_n ** k
        d["n_paths"] = d.get("n_paths", 10_000) * fac_m ** k
        lift = None
        if s.get("driver", {}).get("type") in ("brownian", "fbm"):
            s["driver"]["level"] = s["driver"].get("level", 8) + k
            lift = s["driver"]["level"]
        disc = build_discretization(d, opts)
        problem = build_problem(s, disc.seed)
        sol = next(iter(_solve_routes(s, problem, disc, None).values()))
        rows.append((k, disc.n_steps, disc.n_paths, lift if lift is not None else 0, sol.Y0, ref, abs(sol.Y0 - ref)))
    return rows


def write_study_csv(rows, filename):
    _write_rows(filename, ["level", "n_steps", "n_paths", "lift_level", "value", "reference", "error"],
                [tuple(float(v) if isinstance(v, (float, np.floating)) else v for v in r) for r in rows])
