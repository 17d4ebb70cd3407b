"""Backward flows of ``y -> y + int_t^T G(phi(s, y)) d eta_s`` and their y-derivatives.

The flow is integrated in reversed time, so every scheme is an initial value
method started from ``(y, 1, 0)`` at ``t = T``.  The state is a second-order
jet ``(phi, d_y phi, d_y^2 phi)``; pushing a jet through the vector field is
exactly the first and second variational equation.

Smooth drivers use classical RK4 on ``sum_k G_k(phi) deta^k/ds``.  Rough
drivers use the log-ODE method: each cell increment (reversed in time) is
replaced by its truncated logarithm and the associated vector field
(level-1 fields, Lie brackets weighted by the area, and level-3 terms) is
integrated for unit time with RK4.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .rough_path import RoughPath, SmoothPath, _inverse, _log

DEFAULT_GUARD = 1e6


class FlowError(RuntimeError):
    pass


class FlowExplosionError(FlowError):
    """|phi| exceeded the non-explosion guard."""


class FlowPositivityError(FlowError):
    """d_y phi stopped being strictly positive."""


class FlowRangeError(FlowError):
    """Evaluation point outside the tabulated or bracketable range."""


# --------------------------------------------------------------------------
# vector fields

Deriv = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class VectorField:
    """d scalar fields G_k on R with derivatives.

    ``derivs[k][j]`` is the j-th derivative of G_k.  Orders beyond the ones
    supplied are obtained by central differences of the highest one given
    (step ``fd_step``); only area and level-3 terms need them.
    """

    derivs: tuple
    bound: Optional[float] = None
    name: str = "custom"
    fd_step: float = 1e-3
    zero: bool = False

    @property
    def d(self) -> int:
        return len(self.derivs)

    def derivative(self, k: int, order: int, y: np.ndarray) -> np.ndarray:
        given = self.derivs[k]
        if order < len(given):
            return np.broadcast_to(np.asarray(given[order](y), dtype=float), np.shape(y))
        h = self.fd_step
        return (self.derivative(k, order - 1, y + h) - self.derivative(k, order - 1, y - h)) / (2 * h)

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.stack([self.derivative(k, 0, y) for k in range(self.d)])

    def sup_norm(self, ys, max_order: int = 2) -> float:
        """max_k max_{j<=max_order} sup |G_k^(j)| over the sample points."""
        ys = np.asarray(ys, dtype=float)
        return float(max(np.max(np.abs(self.derivative(k, j, ys)))
                         for k in range(self.d) for j in range(max_order + 1)))

    def check_bound(self, ys, max_order: int = 2) -> bool:
        return self.bound is None or self.sup_norm(ys, max_order) <= self.bound

    # constructors --------------------------------------------------------

    @classmethod
    def from_callables(cls, derivs: Sequence[Sequence[Deriv]], bound=None, name="custom") -> "VectorField":
        derivs = tuple(tuple(c) for c in derivs)
        for c in derivs:
            if len(c) < 3:
                raise ValueError("each component needs G, G' and G''")
        return cls(derivs, bound, name)

    @classmethod
    def zeros(cls, d: int = 1) -> "VectorField":
        z = lambda y: np.zeros_like(y, dtype=float)  # noqa: E731
        return cls(tuple((z,) * 5 for _ in range(d)), 0.0, "zero", zero=True)

    @classmethod
    def constant(cls, values: Sequence[float]) -> "VectorField":
        z = lambda y: np.zeros_like(y, dtype=float)  # noqa: E731
        comps = tuple((lambda y, c=float(c): np.full_like(y, c, dtype=float), z, z, z, z) for c in values)
        return cls(comps, float(max(abs(v) for v in values)), "constant",
                   zero=all(v == 0 for v in values))

    @classmethod
    def affine(cls, offsets: Sequence[float], slopes: Sequence[float]) -> "VectorField":
        """G_k(y) = offsets[k] + slopes[k] * y."""
        z = lambda y: np.zeros_like(y, dtype=float)  # noqa: E731
        comps = []
        for a, b in zip(offsets, slopes):
            comps.append((lambda y, a=float(a), b=float(b): a + b * y,
                          lambda y, b=float(b): np.full_like(y, b, dtype=float), z, z, z))
        zero = all(a == 0 and b == 0 for a, b in zip(offsets, slopes))
        return cls(tuple(comps), None, "affine", zero=zero)

    @classmethod
    def linear(cls, slopes: Sequence[float]) -> "VectorField":
        return cls.affine([0.0] * len(slopes), slopes)

    @classmethod
    def sine(cls, amplitudes: Sequence[float], frequencies: Sequence[float], phases=None) -> "VectorField":
        """G_k(y) = a_k sin(w_k y + c_k): bounded with all derivatives."""
        phases = [0.0] * len(amplitudes) if phases is None else phases
        comps = []
        for a, w, c in zip(amplitudes, frequencies, phases):
            a, w, c = float(a), float(w), float(c)
            comps.append(tuple(
                (lambda y, j=j, a=a, w=w, c=c: a * w ** j * np.sin(w * y + c + j * math.pi / 2))
                for j in range(5)))
        bound = max(abs(a) * max(1.0, abs(w)) ** 2 for a, w in zip(amplitudes, frequencies))
        return cls(tuple(comps), bound, "sine", zero=all(a == 0 for a in amplitudes))


# --------------------------------------------------------------------------
# jets: (value, first, second) derivative w.r.t. the spatial argument y

def _jet_eval(field_: VectorField, order: int, jet):
    """Stacked jets of G_k^(order)(phi) for all k; each entry has shape (d, n)."""
    v, d1, d2 = jet
    f0 = np.stack([field_.derivative(k, order, v) for k in range(field_.d)])
    f1 = np.stack([field_.derivative(k, order + 1, v) for k in range(field_.d)])
    f2 = np.stack([field_.derivative(k, order + 2, v) for k in range(field_.d)])
    return f0, f1 * d1, f2 * d1 * d1 + f1 * d2


def _contract1(c, a):
    return tuple(np.einsum("a,an->n", c, x) for x in a)


def _contract2(c, a, b):
    e = lambda x, y: np.einsum("ab,an,bn->n", c, x, y)  # noqa: E731
    return (e(a[0], b[0]),
            e(a[1], b[0]) + e(a[0], b[1]),
            e(a[2], b[0]) + 2 * e(a[1], b[1]) + e(a[0], b[2]))


def _contract3(c, a, b, g):
    e = lambda x, y, z: np.einsum("abc,an,bn,cn->n", c, x, y, z)  # noqa: E731
    return (e(a[0], b[0], g[0]),
            e(a[1], b[0], g[0]) + e(a[0], b[1], g[0]) + e(a[0], b[0], g[1]),
            e(a[2], b[0], g[0]) + e(a[0], b[2], g[0]) + e(a[0], b[0], g[2])
            + 2 * (e(a[1], b[1], g[0]) + e(a[1], b[0], g[1]) + e(a[0], b[1], g[1])))


def _jadd(a, b):
    return tuple(x + y for x, y in zip(a, b))


def _logode_field(field_: VectorField, l1, l2, l3, jet):
    """Vector field of the Lie element (l1, l2, l3), applied to a jet.

    A word e_a e_b ... acts as the composition G_a d/dy (G_b d/dy (...)) applied
    to the identity, so level 2 gives sum_ab l2_ab G_a G_b' (the Lie brackets
    [G_a, G_b] = G_a G_b' - G_b G_a' when l2 is antisymmetric) and level 3
    gives sum_abc l3_abc (G_a G_b' G_c' + G_a G_b G_c'').
    """
    g0 = _jet_eval(field_, 0, jet)
    out = _contract1(l1, g0)
    if l2 is not None:
        g1 = _jet_eval(field_, 1, jet)
        out = _jadd(out, _contract2(l2, g0, g1))
        if l3 is not None:
            g2 = _jet_eval(field_, 2, jet)
            out = _jadd(out, _contract3(l3, g0, g1, g1))
            out = _jadd(out, _contract3(l3, g0, g0, g2))
    return out


def _rk4(rhs, jet, h):
    k1 = rhs(0.0, jet)
    k2 = rhs(0.5 * h, tuple(x + 0.5 * h * k for x, k in zip(jet, k1)))
    k3 = rhs(0.5 * h, tuple(x + 0.5 * h * k for x, k in zip(jet, k2)))
    k4 = rhs(h, tuple(x + h * k for x, k in zip(jet, k3)))
    return tuple(x + h / 6.0 * (a + 2 * b + 2 * c + e) for x, a, b, c, e in zip(jet, k1, k2, k3, k4))


# --------------------------------------------------------------------------
# flow specification and values

@dataclass(frozen=True)
class FlowSpec:
    """Vector field, driver and integration settings for the backward flow.

    ``steps`` is the RK4 step count over the whole horizon for smooth drivers
    (distributed over sub-intervals by length); ``rk_substeps`` is the RK4
    step count per rough-path cell for the log-ODE scheme.
    """

    field: VectorField
    driver: Union[SmoothPath, RoughPath]
    steps: int = 1000
    rk_substeps: int = 2
    guard: float = DEFAULT_GUARD

    def __post_init__(self):
        if self.steps <= 0 or self.rk_substeps <= 0:
            raise ValueError("step counts must be positive")
        if self.field.d != self.driver.d:
            raise ValueError(f"vector field has {self.field.d} components, driver has dimension {self.driver.d}")

    @property
    def T(self) -> float:
        return float(self.driver.T)

    @property
    def rough(self) -> bool:
        return isinstance(self.driver, RoughPath)

    @property
    def identity(self) -> bool:
        return self.field.zero


@dataclass(frozen=True)
class FlowValue:
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    t: float
    y: np.ndarray


def _reversed_logs(path: RoughPath):
    """Truncated logs of each cell increment seen in reversed time.

    Running ``t`` from T down to 0 drives the equation with r -> -eta_{T-r};
    the signature of a reversed, negated segment is dilate(-1, x^{-1}).
    """
    y1, y2, y3 = _inverse(path.level1, path.level2, path.level3)
    y1 = -y1
    if y3 is not None:
        y3 = -y3
    return _log(y1, y2, y3)


def _check_state(jet, guard, stats):
    v, d1, _ = jet
    if not np.all(np.isfinite(v)) or np.any(np.abs(v) > guard):
        raise FlowExplosionError(f"flow left the guard |phi| <= {guard:g}")
    m = float(np.min(d1)) if d1.size else 1.0
    if not m > 0:
        raise FlowPositivityError(f"d_y phi lost positivity (min {m:g})")
    stats["min_dphi"] = min(stats["min_dphi"], m)
    stats["max_dphi"] = max(stats["max_dphi"], float(np.max(d1)) if d1.size else 1.0)


def march(spec: FlowSpec, ys, nodes) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    """Flow jets at every time in ``nodes`` for every start value in ``ys``.

    Returns arrays of shape (len(nodes), len(ys)) for phi, d_y phi, d_y^2 phi
    plus a dict with the extreme values of d_y phi seen along the way.
    """
    ys = np.asarray(ys, dtype=float).ravel()
    nodes = np.asarray(nodes, dtype=float).ravel()
    T = spec.T
    if np.any(nodes < -1e-12) or np.any(nodes > T + 1e-12):
        raise ValueError(f"flow times must lie in [0, {T}]")
    order = np.argsort(-nodes, kind="stable")
    out = [np.empty((nodes.size, ys.size)) for _ in range(3)]
    jet = (ys.copy(), np.ones_like(ys), np.zeros_like(ys))
    stats = {"min_dphi": 1.0, "max_dphi": 1.0}
    if spec.identity:
        out[0][:] = ys
        out[1][:] = 1.0
        out[2][:] = 0.0
        return out[0], out[1], out[2], stats
    if spec.rough:
        _march_rough(spec, jet, nodes, order, out, stats)
    else:
        _march_smooth(spec, jet, nodes, order, out, stats)
    return out[0], out[1], out[2], stats


def _march_smooth(spec, jet, nodes, order, out, stats):
    drv: SmoothPath = spec.driver
    T = spec.T
    knots = drv.knots[(drv.knots > 0) & (drv.knots < T)]
    stops = np.unique(np.concatenate([[0.0, T], knots, nodes]))[::-1]
    k = 0
    t = T
    while k < len(order) and nodes[order[k]] >= T - 1e-15:
        for a, j in zip(out, jet):
            a[order[k]] = j
        k += 1
    for s in stops[1:]:
        m = max(1, math.ceil(spec.steps * (t - s) / T - 1e-9))
        h = (t - s) / m
        eps = 1e-12 * (t - s)
        for i in range(m):
            r0 = t - i * h

            def rhs(dr, state, r0=r0):
                # stay strictly inside [s, t] so one-sided slopes at knots are used
                eta_dot = drv.dot(min(max(r0 - dr, s + eps), t - eps))[0]
                return _contract1(eta_dot, _jet_eval(spec.field, 0, state))

            jet = _rk4(rhs, jet, h)
            _check_state(jet, spec.guard, stats)
        t = s
        while k < len(order) and nodes[order[k]] >= t - 1e-12:
            for a, j in zip(out, jet):
                a[order[k]] = j
            k += 1


def _march_rough(spec, jet, nodes, order, out, stats):
    path: RoughPath = spec.driver
    idx = np.array([path.node_index(t) for t in nodes])
    l1, l2, l3 = _reversed_logs(path)
    use_area = path.d > 1 and np.any(l2 != 0)
    n = len(path)
    k = 0
    while k < len(order) and idx[order[k]] == n:
        for a, j in zip(out, jet):
            a[order[k]] = j
        k += 1
    h = 1.0 / spec.rk_substeps
    for cell in range(n - 1, -1, -1):
        c2 = l2[cell] if use_area else None
        c3 = None if (l3 is None or c2 is None) else l3[cell]

        def rhs(_, state, c1=l1[cell], c2=c2, c3=c3):
            return _logode_field(spec.field, c1, c2, c3, state)

        for _ in range(spec.rk_substeps):
            jet = _rk4(rhs, jet, h)
        _check_state(jet, spec.guard, stats)
        while k < len(order) and idx[order[k]] == cell:
            for a, j in zip(out, jet):
                a[order[k]] = j
            k += 1


def _flow(spec: FlowSpec, t: float, y) -> FlowValue:
    y = np.asarray(y, dtype=float)
    phi, dphi, d2phi, _ = march(spec, y.ravel(), [t])
    return FlowValue(phi[0].reshape(y.shape), dphi[0].reshape(y.shape), d2phi[0].reshape(y.shape), float(t), y)


def solve_ode_flow(spec: FlowSpec, t: float, y) -> FlowValue:
    """Flow of a smooth driver at (t, y); ``y`` may be an array."""
    if spec.rough:
        raise TypeError("solve_ode_flow needs a SmoothPath driver")
    return _flow(spec, t, y)


def solve_rde_flow(spec: FlowSpec, t: float, y) -> FlowValue:
    """Log-ODE flow of a rough driver at (t, y); ``t`` must be a grid node."""
    if not spec.rough:
        raise TypeError("solve_rde_flow needs a RoughPath driver")
    return _flow(spec, t, y)


def flow_value(spec: FlowSpec, t: float, y) -> FlowValue:
    return _flow(spec, t, y)


# --------------------------------------------------------------------------
# inversion

def monotone_inverse(fn, x, guess=None, tol: float = 1e-10, max_iter: int = 100, max_growth: int = 60):
    """Solve fn(y) = x for an increasing ``fn`` returning (value, derivative).

    Safeguarded Newton: a bracket is grown geometrically around the guess,
    Newton steps leaving the bracket are replaced by bisection.
    """
    x = np.asarray(x, dtype=float)
    shape = x.shape
    x = x.ravel()
    y = x.copy() if guess is None else np.asarray(guess, dtype=float).ravel().copy()
    lo, hi = y - 1.0, y + 1.0
    f_lo, _ = fn(lo)
    f_hi, _ = fn(hi)
    step = np.full_like(y, 2.0)
    for _ in range(max_growth):
        bad_lo, bad_hi = f_lo > x, f_hi < x
        if not (bad_lo.any() or bad_hi.any()):
            break
        lo = np.where(bad_lo, lo - step, lo)
        hi = np.where(bad_hi, hi + step, hi)
        step = 2 * step
        f_lo, _ = fn(lo)
        f_hi, _ = fn(hi)
    else:
        raise FlowRangeError("could not bracket the inverse within the allowed bracket growth")
    y = np.clip(y, lo, hi)
    for _ in range(max_iter):
        f, df = fn(y)
        r = f - x
        if np.all(np.abs(r) <= tol):
            return y.reshape(shape)
        hi = np.where(r > 0, y, hi)
        lo = np.where(r < 0, y, lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            ny = y - r / df
        bad = ~np.isfinite(ny) | (ny <= lo) | (ny >= hi)
        ny = np.where(bad, 0.5 * (lo + hi), ny)
        y = np.where(np.abs(r) <= tol, y, ny)
    f, _ = fn(y)
    if np.any(np.abs(f - x) > 10 * tol):
        raise FlowRangeError(f"inverse did not converge (max residual {np.max(np.abs(f - x)):g})")
    return y.reshape(shape)


def flow_inverse(spec: FlowSpec, t: float, x, tol: float = 1e-10, max_iter: int = 100,
                 max_growth: int = 60):
    """psi(t, x) = phi(t, .)^{-1}(x)."""
    if spec.identity:
        return np.asarray(x, dtype=float).copy()

    def fn(y):
        v = flow_value(spec, t, y)
        return v.phi, v.dphi

    return monotone_inverse(fn, x, None, tol, max_iter, max_growth)


# --------------------------------------------------------------------------
# tabulated flows

@dataclass(frozen=True)
class FlowTable:
    """Flow jets on a (time node) x (y node) grid with Hermite interpolation in y.

    Built once by a single backward march; all later evaluations only
    interpolate, so results never depend on evaluation order.
    """

    times: np.ndarray
    ys: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    stats: dict = field(default_factory=dict)
    identity: bool = False

    @classmethod
    def build(cls, spec: FlowSpec, times, ys) -> "FlowTable":
        times = np.asarray(times, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if np.any(np.diff(ys) <= 0):
            raise ValueError("y nodes must be increasing")
        phi, dphi, d2phi, stats = march(spec, ys, times)
        return cls(times, ys, phi, dphi, d2phi, stats, spec.identity)

    def __post_init__(self):
        if not self.identity:
            splines = [(CubicHermiteSpline(self.ys, self.phi[i], self.dphi[i]),
                        CubicHermiteSpline(self.ys, self.dphi[i], self.d2phi[i]),
                        CubicSpline(self.ys, self.d2phi[i]))
                       for i in range(self.times.size)]
            object.__setattr__(self, "_splines", splines)

    def node(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise FlowRangeError(f"t={t} is not a tabulated time")
        return i

    def evaluate(self, i: int, y):
        """(phi, dphi, d2phi) at time node ``i``."""
        y = np.asarray(y, dtype=float)
        if self.identity:
            return y.copy(), np.ones_like(y), np.zeros_like(y)
        if y.size and (y.min() < self.ys[0] or y.max() > self.ys[-1]):
            raise FlowRangeError(
                f"y range [{y.min():.4g}, {y.max():.4g}] outside table [{self.ys[0]:.4g}, {self.ys[-1]:.4g}]")
        s0, s1, s2 = self._splines[i]
        return s0(y), s1(y), s2(y)

    def inverse(self, i: int, x, tol: float = 1e-10):
        x = np.asarray(x, dtype=float)
        if self.identity:
            return x.copy()
        lo_v, hi_v = self.phi[i, 0], self.phi[i, -1]
        if x.size and (x.min() < lo_v or x.max() > hi_v):
            raise FlowRangeError(f"value outside the tabulated flow range [{lo_v:.4g}, {hi_v:.4g}]")
        guess = np.interp(x, self.phi[i], self.ys)

        def fn(y):
            v, d, _ = self.evaluate(i, np.clip(y, self.ys[0], self.ys[-1]))
            return v, d

        return monotone_inverse(fn, x, guess, tol, max_growth=0 if x.size == 0 else 60)


def write_flow_csv(spec: FlowSpec, y: float, filename, times=None) -> None:
    """Trajectory t -> (phi, dphi, d2phi)(t, y) on the driver grid (or ``times``)."""
    if times is None:
        times = spec.driver.times if spec.rough else np.linspace(0.0, spec.T, 101)
    phi, dphi, d2phi, _ = march(spec, [y], times)
    rows = np.column_stack([times, phi[:, 0], dphi[:, 0], d2phi[:, 0]])
    if not np.all(np.isfinite(rows)):
        raise FlowError("non-finite flow values; refusing to write")
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "phi", "dphi", "d2phi"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
