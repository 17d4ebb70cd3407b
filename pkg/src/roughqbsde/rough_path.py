"""Geometric rough paths of degree 2 and 3 over a partition.

A rough path is stored as the truncated signature increment of every cell
of a time grid.  Increments live in the truncated tensor algebra
``R + R^d + (R^d)^{x2} [+ (R^d)^{x3}]`` with the level-0 entry fixed to one.
Everything here is plain numpy; batch axes lead and the tensor axes trail.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import _rng

GEOMETRIC_TOL = 1e-12


class RoughPathError(ValueError):
    pass


class FactorizationError(RoughPathError):
    """Covariance matrix could not be Cholesky-factorized."""


# --------------------------------------------------------------------------
# tensor arithmetic (batched)

def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def _concat(a1, a2, a3, b1, b2, b3):
    c1 = a1 + b1
    c2 = a2 + b2 + _outer(a1, b1)
    if a3 is None:
        return c1, c2, None
    c3 = (a3 + b3 + np.einsum("...i,...jk->...ijk", a1, b2)
          + np.einsum("...ij,...k->...ijk", a2, b1))
    return c1, c2, c3


def _inverse(x1, x2, x3):
    y1 = -x1
    x11 = _outer(x1, x1)
    y2 = -x2 + x11
    if x3 is None:
        return y1, y2, None
    y3 = (-x3 + np.einsum("...i,...jk->...ijk", x1, x2) + np.einsum("...ij,...k->...ijk", x2, x1)
          - np.einsum("...ij,...k->...ijk", x11, x1))
    return y1, y2, y3


def _segment(delta, degree):
    l2 = 0.5 * _outer(delta, delta)
    l3 = np.einsum("...ij,...k->...ijk", l2, delta) / 3.0 if degree == 3 else None
    return delta, l2, l3


def _log(x1, x2, x3):
    """Truncated logarithm; the level-2 part is returned antisymmetrized."""
    l2 = 0.5 * (x2 - np.swapaxes(x2, -1, -2))
    if x3 is None:
        return x1, l2, None
    x11 = _outer(x1, x1)
    l3 = (x3 - 0.5 * (np.einsum("...i,...jk->...ijk", x1, x2) + np.einsum("...ij,...k->...ijk", x2, x1))
          + np.einsum("...ij,...k->...ijk", x11, x1) / 3.0)
    return x1, l2, l3


def _symmetrize_level2(x1, x2):
    """Replace the symmetric part of level 2 by the geometric value 1/2 x1 (x) x1."""
    anti = 0.5 * (x2 - np.swapaxes(x2, -1, -2))
    return anti + 0.5 * _outer(x1, x1)


def _compose_segments(deltas, degree):
    """Signature of the piecewise-linear path with increments ``deltas[..., r, :]``."""
    shape = deltas.shape[:-2]
    d = deltas.shape[-1]
    x1 = np.zeros(shape + (d,))
    x2 = np.zeros(shape + (d, d))
    x3 = np.zeros(shape + (d, d, d)) if degree == 3 else None
    for r in range(deltas.shape[-2]):
        s1, s2, s3 = _segment(deltas[..., r, :], degree)
        x1, x2, x3 = _concat(x1, x2, x3, s1, s2, s3)
    return x1, _symmetrize_level2(x1, x2), x3


# --------------------------------------------------------------------------
# group elements

@dataclass(frozen=True)
class GroupIncrement:
    """Element of the step-2 or step-3 free nilpotent group over R^d."""

    level1: np.ndarray
    level2: np.ndarray
    level3: Optional[np.ndarray] = None
    degree: int = 2

    def __post_init__(self):
        object.__setattr__(self, "level1", np.asarray(self.level1, dtype=float))
        object.__setattr__(self, "level2", np.asarray(self.level2, dtype=float))
        if self.degree not in (2, 3):
            raise RoughPathError(f"degree must be 2 or 3, got {self.degree}")
        if self.degree == 3:
            if self.level3 is None:
                raise RoughPathError("degree 3 increment needs level3")
            object.__setattr__(self, "level3", np.asarray(self.level3, dtype=float))
        elif self.level3 is not None:
            raise RoughPathError("level3 given for a degree 2 increment")
        d = self.level1.shape[0]
        if self.level2.shape != (d, d):
            raise RoughPathError("level2 shape does not match level1")
        if self.level3 is not None and self.level3.shape != (d, d, d):
            raise RoughPathError("level3 shape does not match level1")

    @property
    def d(self) -> int:
        return self.level1.shape[0]

    @property
    def area(self) -> np.ndarray:
        """Antisymmetric part of level 2 (the Levy area for Brownian lifts)."""
        return 0.5 * (self.level2 - self.level2.T)

    @classmethod
    def identity(cls, d: int, degree: int = 2) -> "GroupIncrement":
        return cls(np.zeros(d), np.zeros((d, d)), np.zeros((d, d, d)) if degree == 3 else None, degree)

    @classmethod
    def segment(cls, delta, degree: int = 2) -> "GroupIncrement":
        """Signature of a straight line with increment ``delta``."""
        x1, x2, x3 = _segment(np.asarray(delta, dtype=float), degree)
        return cls(x1, x2, x3, degree)

    def inverse(self) -> "GroupIncrement":
        return GroupIncrement(*_inverse(self.level1, self.level2, self.level3), degree=self.degree)

    def dilate(self, lam: float) -> "GroupIncrement":
        x3 = None if self.level3 is None else lam ** 3 * self.level3
        return GroupIncrement(lam * self.level1, lam ** 2 * self.level2, x3, self.degree)

    def log(self):
        """(level1, antisymmetric level2, level3) of the truncated logarithm."""
        return _log(self.level1, self.level2, self.level3)

    def allclose(self, other: "GroupIncrement", atol: float = 1e-12) -> bool:
        if self.degree != other.degree:
            return False
        ok = np.allclose(self.level1, other.level1, rtol=0, atol=atol) and np.allclose(
            self.level2, other.level2, rtol=0, atol=atol)
        if self.degree == 3:
            ok = ok and np.allclose(self.level3, other.level3, rtol=0, atol=atol)
        return bool(ok)


def chen_concat(a: GroupIncrement, b: GroupIncrement) -> GroupIncrement:
    """Group product ``a (x) b`` in the truncated tensor algebra."""
    if a.degree != b.degree:
        raise RoughPathError(f"degree mismatch: {a.degree} vs {b.degree}")
    if a.d != b.d:
        raise RoughPathError(f"dimension mismatch: {a.d} vs {b.d}")
    return GroupIncrement(*_concat(a.level1, a.level2, a.level3, b.level1, b.level2, b.level3), degree=a.degree)


def degree_for_p(p: float) -> int:
    if p < 2:
        return 2
    if p >= 4:
        raise RoughPathError(f"p={p} needs degree >= 4, only degrees 2 and 3 are supported")
    return int(math.floor(p))


# --------------------------------------------------------------------------
# paths

@dataclass(frozen=True)
class RoughPath:
    """Cell increments ``x_{t_{i-1}, t_i}`` of a geometric rough path.

    ``level1`` has shape (N, d), ``level2`` (N, d, d), ``level3`` (N, d, d, d)
    or None.  ``p`` below 2 marks a lift of a bounded-variation path, which
    may carry either degree.
    """

    times: np.ndarray
    level1: np.ndarray
    level2: np.ndarray
    level3: Optional[np.ndarray] = None
    p: float = 2.5

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if times.ndim != 1 or times.size < 2:
            raise RoughPathError("a rough path needs at least one cell")
        if np.any(np.diff(times) <= 0):
            raise RoughPathError("time grid must be strictly increasing")
        n = times.size - 1
        if self.level1.shape[0] != n or self.level2.shape[0] != n:
            raise RoughPathError("number of increments does not match the grid")
        if self.level3 is not None and self.level3.shape[0] != n:
            raise RoughPathError("number of level3 increments does not match the grid")
        if self.p >= 2 and degree_for_p(self.p) != self.degree:
            raise RoughPathError(f"p={self.p} requires degree {degree_for_p(self.p)}, got {self.degree}")

    @property
    def degree(self) -> int:
        return 2 if self.level3 is None else 3

    @property
    def d(self) -> int:
        return self.level1.shape[1]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return self.level1.shape[0]

    def increment(self, i: int) -> GroupIncrement:
        x3 = None if self.level3 is None else self.level3[i]
        return GroupIncrement(self.level1[i], self.level2[i], x3, self.degree)

    def increment_between(self, i: int, j: int) -> GroupIncrement:
        """Increment over [t_i, t_j] by concatenating the stored cells."""
        x = GroupIncrement.identity(self.d, self.degree)
        for k in range(i, j):
            x = chen_concat(x, self.increment(k))
        return x

    def total(self) -> GroupIncrement:
        return self.increment_between(0, len(self))

    def node_values(self) -> np.ndarray:
        """First-level path values at the grid nodes, starting from 0."""
        out = np.zeros((len(self) + 1, self.d))
        np.cumsum(self.level1, axis=0, out=out[1:])
        return out

    def node_index(self, t: float, tol: float = 1e-12) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol * max(1.0, self.T):
            raise RoughPathError(f"t={t} is not a node of the driver grid")
        return i


@dataclass(frozen=True)
class SmoothPath:
    """A bounded-variation driver ``t -> eta_t`` with derivative ``t -> d eta/dt``.

    ``value`` and ``derivative`` map an array of times of shape (n,) to (n, d).
    ``knots`` lists the points where the derivative may jump; integrators
    step onto them.
    """

    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    T: float
    d: int
    knots: np.ndarray = field(default_factory=lambda: np.zeros(0))
    piecewise_linear: bool = False

    def __call__(self, t) -> np.ndarray:
        return self.value(np.atleast_1d(np.asarray(t, dtype=float)))

    def dot(self, t) -> np.ndarray:
        return self.derivative(np.atleast_1d(np.asarray(t, dtype=float)))

    @classmethod
    def from_functions(cls, value, derivative, T: float, d: int) -> "SmoothPath":
        """Wrap scalar-time callables returning length-d sequences."""
        def v(t):
            return np.array([np.asarray(value(s), dtype=float).reshape(d) for s in t])

        def dv(t):
            return np.array([np.asarray(derivative(s), dtype=float).reshape(d) for s in t])

        return cls(v, dv, float(T), d)

    @classmethod
    def linear(cls, direction: Sequence[float], T: float = 1.0) -> "SmoothPath":
        u = np.asarray(direction, dtype=float)
        return cls(lambda t: t[:, None] * u, lambda t: np.broadcast_to(u, (t.size, u.size)).copy(),
                   float(T), u.size, np.array([0.0, T]), True)

    @classmethod
    def constant(cls, d: int, T: float = 1.0) -> "SmoothPath":
        return cls(lambda t: np.zeros((t.size, d)), lambda t: np.zeros((t.size, d)), float(T), d,
                   np.array([0.0, T]), True)

    @classmethod
    def from_piecewise_linear(cls, times, values) -> "SmoothPath":
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        values = values - values[0]
        slopes = np.diff(values, axis=0) / np.diff(times)[:, None]

        def v(t):
            return np.stack([np.interp(t, times, values[:, k]) for k in range(values.shape[1])], axis=-1)

        def dv(t):
            idx = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(slopes) - 1)
            return slopes[idx]

        return cls(v, dv, float(times[-1]), values.shape[1], times.copy(), True)

    @classmethod
    def from_samples(cls, times, values) -> "SmoothPath":
        """Cubic-spline (piecewise polynomial) interpolant of sampled values."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        spline = CubicSpline(times, values - values[0], axis=0)
        dspline = spline.derivative()
        return cls(lambda t: spline(t), lambda t: dspline(t), float(times[-1]), values.shape[1], times.copy())


def _check_grid(grid, T: float) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise RoughPathError("grid needs at least two points")
    if np.any(np.diff(grid) <= 0):
        raise RoughPathError("grid must be strictly increasing")
    if grid[0] < -1e-14 or grid[-1] > T * (1 + 1e-14) + 1e-14:
        raise RoughPathError(f"grid [{grid[0]}, {grid[-1]}] exceeds the path domain [0, {T}]")
    return grid


def lift_smooth_path(path: SmoothPath, grid, degree: int = 2, refinement: int = 16) -> RoughPath:
    """Canonical lift of a bounded-variation path.

    Each cell is split into ``refinement`` equal sub-segments whose line
    signatures are concatenated.  A piecewise-linear path whose knots all lie
    on ``grid`` is lifted exactly with one segment per cell.
    """
    grid = _check_grid(grid, path.T)
    if refinement < 1:
        raise RoughPathError("refinement must be >= 1")
    if path.piecewise_linear:
        inner = path.knots[(path.knots > grid[0]) & (path.knots < grid[-1])]
        if np.all(np.isin(inner, grid)):
            refinement = 1
        else:
            return _lift_piecewise_linear(path, grid, degree)
    sub = grid[:-1, None] + np.linspace(0.0, 1.0, refinement + 1)[None, :] * np.diff(grid)[:, None]
    vals = path(sub.ravel()).reshape(sub.shape + (path.d,))
    x1, x2, x3 = _compose_segments(np.diff(vals, axis=1), degree)
    return RoughPath(grid, x1, x2, x3, p=1.0)


def _lift_piecewise_linear(path: SmoothPath, grid, degree: int) -> RoughPath:
    fine = np.union1d(grid, path.knots[(path.knots >= grid[0]) & (path.knots <= grid[-1])])
    vals = path(fine)
    x1, x2, x3 = _cells_from_fine(fine, vals[None], grid, degree)
    return RoughPath(grid, x1[0], x2[0], x3 if x3 is None else x3[0], p=1.0)


def _cells_from_fine(fine, vals, grid, degree):
    """Cell signatures of piecewise-linear paths sampled on ``fine`` (a superset of ``grid``).

    ``vals`` has shape (batch, len(fine), d).
    """
    idx = np.searchsorted(fine, grid)
    if not np.allclose(fine[idx], grid, rtol=0, atol=1e-13):
        raise RoughPathError("grid is not contained in the sampling grid")
    counts = np.diff(idx)
    rmax = int(counts.max())
    deltas = np.diff(vals, axis=1)
    batch, _, d = vals.shape
    padded = np.zeros((batch, len(counts), rmax, d))
    for j in range(rmax):
        live = counts > j
        padded[:, live, j, :] = deltas[:, idx[:-1][live] + j, :]
    return _compose_segments(padded, degree)


def inverse(x: GroupIncrement) -> GroupIncrement:
    return x.inverse()


# --------------------------------------------------------------------------
# Brownian motion with Levy area

def _check_subfactor(subfactor: int) -> int:
    if subfactor < 1 or subfactor & (subfactor - 1):
        raise RoughPathError(f"subfactor must be a power of two, got {subfactor}")
    return int(math.log2(subfactor))


def _brownian_fine(normals: np.ndarray, grid: np.ndarray, d: int, subfactor: int) -> np.ndarray:
    """Levy (midpoint-bridge) construction on the grid refined ``subfactor`` times.

    ``normals`` has shape (batch, N * subfactor * d); the first N*d entries set
    the grid values, later blocks refine by successive midpoints so a path at
    subfactor 2m extends the path at subfactor m.
    """
    batch = normals.shape[0]
    n = grid.size - 1
    levels = _check_subfactor(subfactor)
    dt = np.diff(grid)
    pos = n * d
    z = normals[:, :pos].reshape(batch, n, d)
    vals = np.zeros((batch, n + 1, d))
    np.cumsum(z * np.sqrt(dt)[None, :, None], axis=1, out=vals[:, 1:])
    times = grid.copy()
    for _ in range(levels):
        m = times.size - 1
        h = np.diff(times)
        z = normals[:, pos:pos + m * d].reshape(batch, m, d)
        pos += m * d
        mid = 0.5 * (vals[:, :-1] + vals[:, 1:]) + 0.5 * np.sqrt(h)[None, :, None] * z
        new = np.empty((batch, 2 * m + 1, d))
        new[:, 0::2] = vals
        new[:, 1::2] = mid
        vals = new
        tm = np.empty(2 * m + 1)
        tm[0::2] = times
        tm[1::2] = 0.5 * (times[:-1] + times[1:])
        times = tm
    return vals


def _brownian_normals(seed: int, lo: int, hi: int, count: int) -> np.ndarray:
    return np.stack([_rng.substream(seed, _rng.BROWNIAN_DRIVER, i).standard_normal(count) for i in range(lo, hi)])


def fine_grid(grid, subfactor: int) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    frac = np.arange(subfactor) / subfactor
    return np.append((grid[:-1, None] + frac[None, :] * np.diff(grid)[:, None]).ravel(), grid[-1])


def brownian_sample_path(seed: int, grid, d: int, subfactor: int = 16, sample: int = 0):
    """Fine-grid Brownian values behind ``brownian_lift``: (fine_times, values)."""
    grid = np.asarray(grid, dtype=float)
    n = grid.size - 1
    normals = _brownian_normals(seed, sample, sample + 1, n * subfactor * d)
    vals = _brownian_fine(normals, grid, d, subfactor)[0]
    return fine_grid(grid, subfactor), vals


def brownian_lift(seed: int, grid, d: int, subfactor: int = 16, p: float = 2.5, sample: int = 0) -> RoughPath:
    """Enhanced Brownian motion on ``grid``.

    The area of each cell is the Stratonovich (midpoint) iterated integral of
    the piecewise-linear interpolation on the ``subfactor``-times refined
    grid; the symmetric part of level 2 is set to 1/2 dB (x) dB.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        raise RoughPathError("empty grid")
    _check_grid(grid, grid[-1])
    if not 2 < p < 3:
        raise RoughPathError(f"enhanced Brownian motion is lifted at degree 2 with p in (2,3), got p={p}")
    x1, x2, _ = brownian_lift_batch(seed, grid, d, subfactor, sample, sample + 1)
    return RoughPath(grid, x1[0], x2[0], None, p=p)


def brownian_lift_batch(seed: int, grid, d: int, subfactor: int, lo: int, hi: int,
                        threads: int = 1, chunk: int = 2048):
    """Level-1/level-2 cell increments of samples ``lo..hi-1``; shapes (n, N, d), (n, N, d, d)."""
    grid = np.asarray(grid, dtype=float)
    n = grid.size - 1
    _check_subfactor(subfactor)

    def work(bounds):
        a, b = bounds
        normals = _brownian_normals(seed, a, b, n * subfactor * d)
        vals = _brownian_fine(normals, grid, d, subfactor)
        deltas = np.diff(vals, axis=1).reshape(b - a, n, subfactor, d)
        x1, x2, _ = _compose_segments(deltas, 2)
        return x1, x2

    parts = _rng.parallel_map(work, [(a + lo, b + lo) for a, b in _rng.chunks(hi - lo, chunk)], threads)
    return np.concatenate([q[0] for q in parts]), np.concatenate([q[1] for q in parts]), None


# --------------------------------------------------------------------------
# fractional Brownian motion

def fbm_covariance(s, t, H: float):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return 0.5 * (s ** (2 * H) + t ** (2 * H) - np.abs(t - s) ** (2 * H))


def default_fbm_p(H: float) -> float:
    for p in (2.5, 3.5):
        if H * p > 1:
            return p
    return 0.5 * (1.0 / H + 4.0)


def _validate_fbm(H: float, p: Optional[float]) -> float:
    if not 0.25 < H < 1:
        raise RoughPathError(f"Hurst parameter must satisfy H > 1/4 (and H < 1), got H={H}")
    if p is None:
        p = default_fbm_p(H)
    if H * p <= 1:
        raise RoughPathError(f"need H*p > 1, got H={H}, p={p}")
    if not 2 <= p < 4:
        raise RoughPathError(f"p must lie in [2, 4) for a degree 2/3 lift, got {p}")
    return p


def fbm_cholesky(times, H: float) -> np.ndarray:
    """Lower Cholesky factor of the fBm covariance at the (positive) ``times``."""
    times = np.asarray(times, dtype=float)
    cov = fbm_covariance(times[:, None], times[None, :], H)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(
            f"fBm covariance on {times.size} points is not numerically positive definite (H={H})") from exc


def fbm_sample_values(seed: int, H: float, times, d: int, lo: int, hi: int, chol=None) -> np.ndarray:
    """Exact-in-law fBm values at ``times`` (times[0] must be 0) for samples lo..hi-1."""
    times = np.asarray(times, dtype=float)
    if times[0] != 0.0:
        raise RoughPathError("fBm sampling grid must start at 0")
    if chol is None:
        chol = fbm_cholesky(times[1:], H)
    m = times.size - 1
    out = np.zeros((hi - lo, times.size, d))
    for s in range(lo, hi):
        z = _rng.substream(seed, _rng.FBM_DRIVER, s).standard_normal((d, m))
        out[s - lo, 1:, :] = (chol @ z.T)
    return out


def dyadic_grid(level: int, T: float = 1.0) -> np.ndarray:
    return np.linspace(0.0, T, 2 ** level + 1)


def fbm_lift(seed: int, H: float, grid, d: int, dyadic_level: int, p: Optional[float] = None,
             sample: int = 0) -> RoughPath:
    """Lift of d independent fBm components.

    fBm is sampled exactly on the union of ``grid`` and the level-``dyadic_level``
    dyadic grid of [0, T], and each cell of ``grid`` receives the signature of
    the piecewise-linear interpolation (the dyadic approximation).
    """
    p = _validate_fbm(H, p)
    grid = np.asarray(grid, dtype=float)
    _check_grid(grid, grid[-1])
    fine = np.union1d(grid, dyadic_grid(dyadic_level, grid[-1]))
    vals = fbm_sample_values(seed, H, fine, d, sample, sample + 1)
    x1, x2, x3 = _cells_from_fine(fine, vals, grid, degree_for_p(p))
    return RoughPath(grid, x1[0], x2[0], None if x3 is None else x3[0], p=p)


# --------------------------------------------------------------------------
# p-variation

def _prefix_signatures(path: RoughPath):
    n, d = len(path), path.d
    s1 = np.zeros((n + 1, d))
    s2 = np.zeros((n + 1, d, d))
    s3 = np.zeros((n + 1, d, d, d)) if path.degree == 3 else None
    for i in range(n):
        x3 = None if s3 is None else path.level3[i]
        a3 = None if s3 is None else s3[i]
        c1, c2, c3 = _concat(s1[i], s2[i], a3, path.level1[i], path.level2[i], x3)
        s1[i + 1], s2[i + 1] = c1, c2
        if s3 is not None:
            s3[i + 1] = c3
    return s1, s2, s3


def homogeneous_norm(x1, x2, x3=None):
    """|log_1| + |log_2|^(1/2) [+ |log_3|^(1/3)], batched over leading axes."""
    l1, l2, l3 = _log(x1, x2, x3)
    out = np.linalg.norm(l1, axis=-1) + np.sqrt(np.linalg.norm(l2, axis=(-2, -1)))
    if l3 is not None:
        out = out + np.cbrt(np.sqrt(np.sum(l3 ** 2, axis=(-3, -2, -1))))
    return out


def p_variation(path: RoughPath, p: float) -> float:
    """p-variation over sub-partitions of the stored grid (a lower bound for the true value)."""
    if p < 1:
        raise RoughPathError("p must be >= 1")
    s1, s2, s3 = _prefix_signatures(path)
    n = len(path)
    best = np.zeros(n + 1)
    for j in range(1, n + 1):
        i1, i2, i3 = _inverse(s1[:j], s2[:j], None if s3 is None else s3[:j])
        b3 = None if s3 is None else np.broadcast_to(s3[j], i3.shape)
        x1, x2, x3 = _concat(i1, i2, i3, np.broadcast_to(s1[j], i1.shape), np.broadcast_to(s2[j], i2.shape), b3)
        norms = homogeneous_norm(x1, x2, x3)
        best[j] = np.max(best[:j] + norms ** p)
    return float(best[n] ** (1.0 / p))


# --------------------------------------------------------------------------
# CSV format

def _columns(d: int, degree: int) -> list[str]:
    cols = ["t_start", "t_end"] + [f"level1_{i + 1}" for i in range(d)]
    cols += [f"level2_{i + 1}_{j + 1}" for i in range(d) for j in range(d)]
    if degree == 3:
        cols += [f"level3_{i + 1}_{j + 1}_{k + 1}" for i in range(d) for j in range(d) for k in range(d)]
    return cols


def write_rough_path_csv(path: RoughPath, filename) -> None:
    n, d = len(path), path.d
    parts = [path.times[:-1, None], path.times[1:, None], path.level1, path.level2.reshape(n, d * d)]
    if path.level3 is not None:
        parts.append(path.level3.reshape(n, d ** 3))
    rows = np.hstack(parts)
    if not np.all(np.isfinite(rows)):
        raise RoughPathError("refusing to write non-finite rough path values")
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_columns(d, path.degree))
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def read_rough_path_csv(filename, p: Optional[float] = None) -> RoughPath:
    with open(Path(filename), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row])
    d = sum(1 for c in header if c.startswith("level1_"))
    degree = 3 if any(c.startswith("level3_") for c in header) else 2
    if header != _columns(d, degree):
        raise RoughPathError(f"unexpected rough path CSV header in {filename}")
    n = data.shape[0]
    if n and np.any(np.abs(data[1:, 0] - data[:-1, 1]) > 1e-12):
        raise RoughPathError("rough path CSV cells are not contiguous")
    times = np.append(data[:, 0], data[-1, 1])
    x1 = data[:, 2:2 + d]
    x2 = data[:, 2 + d:2 + d + d * d].reshape(n, d, d)
    x3 = data[:, 2 + d + d * d:].reshape(n, d, d, d) if degree == 3 else None
    if p is None:
        p = 3.5 if degree == 3 else 2.5
    return RoughPath(times, x1, x2, x3, p=p)
