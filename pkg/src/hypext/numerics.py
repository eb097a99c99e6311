"""Grids, sampled functions, quadrature and ODE stepping.

Everything downstream works on one shared spatial grid over [0, 1].  Sampled
functions are piecewise linear between grid points and may jump at declared
breakpoints, where both one-sided values are stored.  The default evaluation
side is "right" (limit from above), matching half-open intervals of the form
(b, 1] used when coefficient rows switch off past a breakpoint.

Design choices, fixed on purpose:

* interpolation is piecewise linear everywhere,
* definite integrals use the composite trapezoid rule (exact on linear data,
  and breakpoint cells never straddle a jump because breakpoints are grid
  points),
* initial value problems use the classical 4th-order Runge-Kutta scheme
  marched over the grid intervals,
* monotone inversion uses bisection on the interpolant (piecewise-linear
  tables have kinks, so Newton is not reliable).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .expressions import Expression, parse_expression  # noqa: F401  (re-exported)

__all__ = [
    "Grid",
    "SpatialFunction",
    "NumericsError",
    "make_grid",
    "evaluate",
    "integrate",
    "solve_ivp",
    "invert_monotone",
    "parse_expression",
    "trapezoid_weights",
    "cumulative_trapezoid_weights",
]

_DEDUP_TOL = 1e-12


class NumericsError(ValueError):
    """Precondition violation in a numerics operation."""


@dataclass(frozen=True)
class Grid:
    """Strictly increasing points spanning [0, 1], some marked as breakpoints.

    Breakpoints are the only places where sampled functions may jump; they
    are always grid points, so no cell ever contains a jump in its interior.
    """

    points: np.ndarray
    breakpoints: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        bps = np.asarray(self.breakpoints, dtype=float)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "breakpoints", bps)
        if pts.ndim != 1 or pts.size < 2:
            raise NumericsError("grid needs at least two points")
        if not np.all(np.diff(pts) > 0):
            raise NumericsError("grid points must be strictly increasing")
        if abs(pts[0]) > _DEDUP_TOL or abs(pts[-1] - 1.0) > _DEDUP_TOL:
            raise NumericsError("grid must span [0, 1]")
        for b in bps:
            if not np.any(np.abs(pts - b) <= _DEDUP_TOL):
                raise NumericsError(f"breakpoint {b} is not a grid point")

    @property
    def n(self) -> int:
        return self.points.size

    @property
    def spacing(self) -> float:
        return float(np.max(np.diff(self.points)))

    def index_of(self, z: float) -> int | None:
        hits = np.nonzero(np.abs(self.points - z) <= _DEDUP_TOL)[0]
        return int(hits[0]) if hits.size else None

    def is_breakpoint(self, z: float) -> bool:
        return bool(np.any(np.abs(self.breakpoints - z) <= _DEDUP_TOL))


def make_grid(n_cells: int, breakpoints: Sequence[float] = ()) -> Grid:
    """Uniform grid of ``n_cells`` cells with ``breakpoints`` inserted.

    Parameters
    ----------
    n_cells : int
        Number of uniform cells, at least 2.
    breakpoints : sequence of float
        Points in [0, 1] to insert (and mark) as breakpoints.  Values closer
        than 1e-12 to an existing point are merged into it.

    Returns
    -------
    Grid
    """
    if not isinstance(n_cells, (int, np.integer)) or n_cells < 2:
        raise NumericsError(f"n_cells must be an integer >= 2, got {n_cells}")
    bps = np.asarray(sorted(breakpoints), dtype=float)
    if bps.size and (bps[0] < 0.0 or bps[-1] > 1.0):
        raise NumericsError("breakpoints must lie in [0, 1]")
    pts = np.linspace(0.0, 1.0, n_cells + 1)
    kept = []
    for b in bps:
        if np.min(np.abs(pts - b)) > _DEDUP_TOL and all(abs(b - k) > _DEDUP_TOL for k in kept):
            kept.append(float(b))
    merged = np.sort(np.concatenate([pts, np.asarray(kept)]))
    marked = np.asarray([b for b in bps if 0.0 + _DEDUP_TOL < b < 1.0 - _DEDUP_TOL], dtype=float)
    # snap marked breakpoints onto the merged points they landed on
    snapped = np.asarray([merged[np.argmin(np.abs(merged - b))] for b in marked])
    snapped = np.unique(snapped)
    return Grid(points=merged, breakpoints=snapped)


class SpatialFunction:
    """Piecewise-linear function on a :class:`Grid` with one-sided values.

    ``left[i]`` and ``right[i]`` are the limits at ``points[i]`` from below
    and above; they differ only at breakpoints.  On the open cell
    (points[i], points[i+1]) the function is the chord from ``right[i]`` to
    ``left[i+1]``.
    """

    def __init__(self, grid: Grid, right: np.ndarray, left: np.ndarray | None = None):
        self.grid = grid
        self.right = np.asarray(right, dtype=float).copy()
        self.left = self.right.copy() if left is None else np.asarray(left, dtype=float).copy()
        if self.right.shape != grid.points.shape or self.left.shape != grid.points.shape:
            raise NumericsError("value arrays must match the grid")
        if not (np.all(np.isfinite(self.right)) and np.all(np.isfinite(self.left))):
            raise NumericsError("sampled values must be finite")
        mismatch = np.nonzero(self.left != self.right)[0]
        for i in mismatch:
            if not grid.is_breakpoint(grid.points[i]):
                raise NumericsError(
                    f"two-sided values differ at non-breakpoint z={grid.points[i]}"
                )

    @classmethod
    def from_callable(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> "SpatialFunction":
        vals = np.asarray(fn(grid.points), dtype=float)
        if vals.shape != grid.points.shape:
            vals = np.full(grid.points.shape, float(fn(grid.points[0])))
        return cls(grid, vals)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "SpatialFunction":
        return cls(grid, np.full(grid.points.shape, float(value)))

    @property
    def is_continuous(self) -> bool:
        return bool(np.all(self.left == self.right))

    def __call__(self, z, side: str = "right"):
        return evaluate(self, z, side)

    def values_for_cells(self) -> tuple[np.ndarray, np.ndarray]:
        """Chord endpoints per cell: (start values, end values)."""
        return self.right[:-1], self.left[1:]


def evaluate(f: SpatialFunction, z, side: str = "right"):
    """Evaluate the interpolant of ``f`` at ``z`` (scalar or array).

    At a grid point the requested one-sided value is returned; in between,
    the cell chord is evaluated.  ``z`` outside [0, 1] is an error.
    """
    if side not in ("left", "right"):
        raise NumericsError(f"side must be 'left' or 'right', got {side!r}")
    zs = np.asarray(z, dtype=float)
    if np.any(zs < -_DEDUP_TOL) or np.any(zs > 1.0 + _DEDUP_TOL):
        raise NumericsError(f"evaluation point outside [0, 1]: {z}")
    zs = np.clip(zs, 0.0, 1.0)
    pts = f.grid.points
    idx = np.searchsorted(pts, zs, side="right") - 1
    idx = np.clip(idx, 0, pts.size - 2)
    z0 = pts[idx]
    z1 = pts[idx + 1]
    w = (zs - z0) / (z1 - z0)
    out = (1.0 - w) * f.right[idx] + w * f.left[idx + 1]
    # exact grid hits get the requested one-sided value
    on_node = np.isclose(zs[..., None], pts[None, ...], rtol=0.0, atol=_DEDUP_TOL) if zs.ndim else None
    if zs.ndim == 0:
        k = f.grid.index_of(float(zs))
        if k is not None:
            return float(f.left[k] if side == "left" else f.right[k])
        return float(out)
    hit = np.any(on_node, axis=-1)
    if np.any(hit):
        node = np.argmax(on_node, axis=-1)
        vals = f.left[node] if side == "left" else f.right[node]
        out = np.where(hit, vals, out)
    return out


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Composite-trapezoid weights for samples at ``points``."""
    w = np.zeros_like(points)
    d = np.diff(points)
    w[:-1] += d / 2.0
    w[1:] += d / 2.0
    return w


def cumulative_trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Lower-triangular matrix W with (W @ v)[k] = trapezoid of v over [points[0], points[k]]."""
    n = points.size
    W = np.zeros((n, n))
    d = np.diff(points)
    for k in range(1, n):
        W[k, :k] += d[:k] / 2.0
        W[k, 1 : k + 1] += d[:k] / 2.0
    return W


def integrate(f: SpatialFunction, a: float, b: float) -> float:
    """Integrate the interpolant of ``f`` over [a, b] by composite trapezoid.

    Partial cells at the endpoints are handled by interpolation; a jump at a
    breakpoint never spans a trapezoid because breakpoints are grid points
    and the one-sided values bound each cell separately.
    """
    if a > b:
        raise NumericsError(f"integration bounds reversed: [{a}, {b}]")
    if a < -_DEDUP_TOL or b > 1.0 + _DEDUP_TOL:
        raise NumericsError("integration bounds must lie in [0, 1]")
    a = float(np.clip(a, 0.0, 1.0))
    b = float(np.clip(b, 0.0, 1.0))
    if a == b:
        return 0.0
    pts = f.grid.points
    lo = int(np.searchsorted(pts, a, side="right"))
    hi = int(np.searchsorted(pts, b, side="left"))
    nodes = np.concatenate([[a], pts[lo:hi], [b]])
    start_vals = np.empty(nodes.size - 1)
    end_vals = np.empty(nodes.size - 1)
    start_vals[0] = evaluate(f, nodes[0], side="right")
    end_vals[-1] = evaluate(f, nodes[-1], side="left")
    if nodes.size > 2:
        inner = nodes[1:-1]
        start_vals[1:] = evaluate(f, inner, side="right")
        end_vals[:-1] = evaluate(f, inner, side="left")
    return float(np.sum(np.diff(nodes) * (start_vals + end_vals) / 2.0))


def solve_ivp(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    grid: Grid,
) -> np.ndarray:
    """March ``y' = rhs(z, y)`` over the grid with classical RK4.

    Returns the state at every grid point, shape ``(n_points,) + y0.shape``;
    the first entry equals ``y0``.  A non-finite state aborts with
    :class:`NumericsError`.
    """
    y = np.asarray(y0, dtype=float)
    out = np.empty((grid.n,) + y.shape)
    out[0] = y
    pts = grid.points
    for k in range(grid.n - 1):
        h = pts[k + 1] - pts[k]
        z = pts[k]
        k1 = np.asarray(rhs(z, y))
        k2 = np.asarray(rhs(z + h / 2.0, y + h / 2.0 * k1))
        k3 = np.asarray(rhs(z + h / 2.0, y + h / 2.0 * k2))
        k4 = np.asarray(rhs(z + h, y + h * k3))
        y = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NumericsError(f"non-finite state at z={pts[k + 1]}")
        out[k + 1] = y
    return out


def invert_monotone(f: SpatialFunction, y: float, tol: float = 1e-12) -> float:
    """Solve f(z) = y for a strictly increasing sampled ``f`` by bisection.

    The samples themselves must be strictly increasing (checked); ``y`` must
    lie in [f(0), f(1)].  The result satisfies |f(z) - y| <= tol.
    """
    vals = f.right
    if not np.all(np.diff(vals) > 0) or not np.all(f.left[1:] > f.right[:-1] - 1e-15):
        raise NumericsError("function is not strictly increasing on its samples")
    lo_val, hi_val = float(vals[0]), float(vals[-1])
    if y < lo_val - tol or y > hi_val + tol:
        raise NumericsError(f"target {y} outside range [{lo_val}, {hi_val}]")
    lo, hi = 0.0, 1.0
    f_lo = lo_val - y
    for _ in range(200):
        mid = (lo + hi) / 2.0
        f_mid = evaluate(f, mid) - y
        if abs(f_mid) <= tol:
            return mid
        if (f_lo < 0) == (f_mid < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return (lo + hi) / 2.0
