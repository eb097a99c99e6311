"""Travel times and the coordinate maps that homogenize transport speeds.

For a component with velocity lambda(z) > 0 the travel time over [0, z] is
phi(z) = integral of 1/lambda.  Components are rescaled onto the slowest
component of their direction through

    sigma_i(z) = psi_n(phi_i(z)),          tau_i = inverse of sigma_i,

where psi_n inverts the slowest travel time.  sigma_i maps [0, 1] onto
[0, sigma_i(1)] with sigma_i(1) <= 1; the controller later fills the leftover
interval (sigma_i(1), 1].  rho_i is the affine map of that leftover interval
onto [0, 1], and the matching controller transport velocity is

    gamma_i(z) = lambda_n(z + (1 - z) * sigma_i(1)) / (1 - sigma_i(1)).

Travel times are computed as the exact integral of the piecewise-linear
velocity interpolant (closed log-form per cell), and inverted in closed form
per cell.  The acceptance tolerances on sigma_i(1) are far below what a
trapezoid rule on 1/lambda can deliver, and for velocities that are exactly
linear in z these tables are exact to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Grid, NumericsError, SpatialFunction
from .system_model import HyperbolicSystem

__all__ = [
    "TravelTime",
    "TransportMaps",
    "travel_time",
    "build_maps",
    "extension_velocity",
    "minimum_time",
]

_SMALL = 1e-12


class TravelTime:
    """Exact cumulative travel time of a piecewise-linear velocity."""

    def __init__(self, lam: SpatialFunction):
        grid = lam.grid
        a = lam.right[:-1]
        b_end = lam.left[1:]
        if np.any(a <= 0.0) or np.any(b_end <= 0.0):
            raise NumericsError("velocity must be positive on [0, 1]")
        h = np.diff(grid.points)
        slope = (b_end - a) / h
        r = slope * h / a
        with np.errstate(divide="ignore", invalid="ignore"):
            cell = np.where(
                np.abs(r) > _SMALL,
                np.log1p(r) / np.where(slope == 0.0, 1.0, slope),
                h / a * (1.0 - r / 2.0 + r * r / 3.0),
            )
        self.grid = grid
        self._a = a
        self._slope = slope
        self.table = np.concatenate([[0.0], np.cumsum(cell)])
        self.total = float(self.table[-1])

    def phi(self, z):
        """Travel time over [0, z]; exact on the velocity interpolant."""
        zs = np.asarray(z, dtype=float)
        scalar = zs.ndim == 0
        zs = np.atleast_1d(np.clip(zs, 0.0, 1.0))
        pts = self.grid.points
        idx = np.clip(np.searchsorted(pts, zs, side="right") - 1, 0, pts.size - 2)
        xi = zs - pts[idx]
        a = self._a[idx]
        slope = self._slope[idx]
        r = slope * xi / a
        with np.errstate(divide="ignore", invalid="ignore"):
            part = np.where(
                np.abs(r) > _SMALL,
                np.log1p(r) / np.where(slope == 0.0, 1.0, slope),
                xi / a * (1.0 - r / 2.0 + r * r / 3.0),
            )
        out = self.table[idx] + part
        return float(out[0]) if scalar else out

    def psi(self, y):
        """Inverse travel time: z with phi(z) = y, for y in [0, phi(1)]."""
        ys = np.asarray(y, dtype=float)
        scalar = ys.ndim == 0
        ys = np.atleast_1d(ys)
        if np.any(ys < -1e-9) or np.any(ys > self.total + 1e-9):
            raise NumericsError(f"travel time {ys} outside [0, {self.total}]")
        ys = np.clip(ys, 0.0, self.total)
        idx = np.clip(np.searchsorted(self.table, ys, side="right") - 1, 0, self.table.size - 2)
        dy = ys - self.table[idx]
        a = self._a[idx]
        slope = self._slope[idx]
        u = slope * dy
        with np.errstate(over="ignore"):
            xi = np.where(
                np.abs(u) > _SMALL,
                a / np.where(slope == 0.0, 1.0, slope) * np.expm1(u),
                a * dy * (1.0 + u / 2.0 + u * u / 6.0),
            )
        out = np.minimum(self.grid.points[idx] + xi, 1.0)
        return float(out[0]) if scalar else out

    def as_spatial_function(self) -> SpatialFunction:
        return SpatialFunction(self.grid, self.table)


def travel_time(lam: SpatialFunction, grid: Grid) -> SpatialFunction:
    """Tabulate phi(z) = integral_0^z d zeta / lambda(zeta) on the grid.

    Strictly increasing with phi(0) = 0; errors on a non-positive velocity
    sample.
    """
    if lam.grid is not grid and not np.array_equal(lam.grid.points, grid.points):
        raise NumericsError("velocity must be sampled on the target grid")
    return TravelTime(lam).as_spatial_function()


@dataclass
class TransportMaps:
    """All per-component coordinate maps of one plant on one grid."""

    grid: Grid
    travel_minus: list[TravelTime]
    travel_plus: list[TravelTime]

    def _travel(self, direction: str) -> list[TravelTime]:
        return self.travel_minus if direction == "-" else self.travel_plus

    def count(self, direction: str) -> int:
        return len(self._travel(direction))

    def phi(self, direction: str, i: int, z):
        return self._travel(direction)[i].phi(z)

    def psi(self, direction: str, i: int, y):
        return self._travel(direction)[i].psi(y)

    def sigma(self, direction: str, i: int, z):
        """sigma_i(z) = psi_slowest(phi_i(z)), the velocity-homogenizing map."""
        tt = self._travel(direction)
        return tt[-1].psi(tt[i].phi(z))

    def sigma_at_1(self, direction: str, i: int) -> float:
        return float(self.sigma(direction, i, 1.0))

    def tau(self, direction: str, i: int, zbar):
        """Inverse of sigma_i, defined for zbar in [0, sigma_i(1)]."""
        tt = self._travel(direction)
        return tt[i].psi(np.minimum(tt[-1].phi(zbar), tt[i].total))

    def rho(self, direction: str, i: int, zbar):
        """Affine map of [sigma_i(1), 1] onto [0, 1] (controller coordinate)."""
        s1 = self.sigma_at_1(direction, i)
        return (np.asarray(zbar, dtype=float) - s1) / (1.0 - s1)

    def rho_inv(self, direction: str, i: int, zeta):
        s1 = self.sigma_at_1(direction, i)
        return s1 + np.asarray(zeta, dtype=float) * (1.0 - s1)

    def sigma_table(self, direction: str, i: int) -> SpatialFunction:
        return SpatialFunction(self.grid, np.asarray(self.sigma(direction, i, self.grid.points)))

    def breakpoint_values(self) -> list[float]:
        """All sigma_i(1) < 1, both directions, sorted and deduplicated."""
        vals = []
        for direction in ("-", "+"):
            for i in range(self.count(direction) - 1):
                vals.append(self.sigma_at_1(direction, i))
        out: list[float] = []
        for v in sorted(vals):
            if not out or abs(v - out[-1]) > 1e-12:
                out.append(v)
        return out


def build_maps(sys: HyperbolicSystem, grid: Grid) -> TransportMaps:
    """Build all transport maps for a validated system.

    Consistency guarantees on the tables: psi_i(phi_i(z)) = z to roundoff at
    grid points, sigma of the slowest component is the identity, and the
    sigma_i(1) are strictly increasing in i with sigma_{n}(1) = 1.
    """
    maps = TransportMaps(
        grid=grid,
        travel_minus=[TravelTime(lam) for lam in sys.lambda_minus],
        travel_plus=[TravelTime(lam) for lam in sys.lambda_plus],
    )
    for direction in ("-", "+"):
        s1 = [maps.sigma_at_1(direction, i) for i in range(maps.count(direction))]
        if any(b - a <= 0 for a, b in zip(s1[:-1], s1[1:])):
            raise NumericsError(f"sigma_i(1) not strictly increasing in direction {direction}")
    return maps


def extension_velocity(maps: TransportMaps, i: int, direction: str) -> SpatialFunction:
    """Controller transport velocity gamma_i for component ``i`` (0-based).

    gamma_i(z) = lambda_slowest(z + (1 - z) sigma_i(1)) / (1 - sigma_i(1)).
    The slowest component (i = n-1) has no extension; requesting it is an
    error, as is sigma_i(1) = 1 (excluded by strict velocity ordering).
    """
    n_dir = maps.count(direction)
    if i < 0 or i >= n_dir - 1:
        raise NumericsError(
            f"component {i} of direction {direction} has no extension (0 <= i < {n_dir - 1})"
        )
    s1 = maps.sigma_at_1(direction, i)
    if 1.0 - s1 <= 1e-12:
        raise NumericsError(f"sigma_{i}(1) = 1 is degenerate")
    lam_slow = maps._travel(direction)[-1]
    pts = maps.grid.points
    mapped = pts + (1.0 - pts) * s1
    # evaluate the slowest velocity's interpolant at the mapped points
    lam_vals = _interp_velocity(lam_slow, mapped)
    return SpatialFunction(maps.grid, lam_vals / (1.0 - s1))


def _interp_velocity(tt: TravelTime, z: np.ndarray) -> np.ndarray:
    pts = tt.grid.points
    idx = np.clip(np.searchsorted(pts, z, side="right") - 1, 0, pts.size - 2)
    return tt._a[idx] + tt._slope[idx] * (z - pts[idx])


def minimum_time(maps: TransportMaps) -> float:
    """Sum of the slowest travel times of both directions.

    This is the theoretical lower bound for driving the state to zero and is
    unaffected by the faster components.
    """
    return maps.travel_minus[-1].total + maps.travel_plus[-1].total
