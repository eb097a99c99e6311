"""Characteristic-marching solver for kernel equations on the triangle.

Both kernel families used in this package have the form

    lam_row_i(z) dK_ij/dz + d/dzeta ( K_ij(z, zeta) lam_col_j(zeta) )
        = sum_m K_im(z, zeta) C_mj(zeta)

on T = {0 <= zeta <= z <= 1}, with data prescribed on the diagonal
zeta = z, on the bottom edge zeta = 0, or (free, set to zero) on z = 1.
Along the characteristic d zeta / d z = lam_col_j(zeta) / lam_row_i(z) the
combination m = K_ij * lam_col_j(zeta) obeys  dm / d zeta = [K C]_ij,  which
is the integral form iterated here.

Each sweep marches column by column in z.  A grid point takes its value from
one RK4 step upstream along its characteristic: either an interpolated value
on the neighbouring column (current sweep) or, when the step crosses a data
boundary, the datum at the crossing.  The coupling integrand [K C] is lagged
one sweep (plain Picard), so the fixed point satisfies the discrete
characteristic integral relations of the PDE.

Which boundary feeds an entry, and in which z-direction the value flows,
depends on the signed velocities:

* opposite row/column signs: the backward characteristic always exits the
  diagonal; march in +z away from it;
* same signs, |lam_row| > |lam_col| (faster row): backward characteristics
  exit the diagonal or the bottom edge; march in +z.  When the bottom edge
  carries no datum (plus rows of the preliminary kernel), points below the
  characteristic through (0, 0) are fed from the free z = 1 edge instead and
  march in -z;
* same signs, |lam_row| < |lam_col|: backward characteristics exit the
  diagonal or the free edge z = 1; march in -z;
* equal row/column velocities (diagonal entries of the preliminary kernel
  and all four blocks of the homogenized kernel): characteristics never
  cross zeta = z; the value flows from the bottom edge (+z) or from
  z = 1 (-z).

Datum switches and jumps in boundary data make the solution only piecewise
continuous.  Every separating characteristic is recorded as a "line"; the
triangle is partitioned into bands between consecutive lines.  Marching
never interpolates across a band boundary, and both one-sided limits on
every line are marched explicitly along it (a line is a characteristic of
its own entry, and the zero coupling diagonal keeps the coupling term
continuous across it), so each band has a ghost value at its edges and the
jumps stay sharp to the order of the scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "EntryPlan",
    "SolveInfo",
    "KernelConvergenceError",
    "solve_characteristic_system",
    "pde_residual",
    "trace_characteristic",
]

_EPS = 1e-12


class KernelConvergenceError(RuntimeError):
    def __init__(self, message: str, last_change: float, iterations: int):
        super().__init__(message)
        self.last_change = last_change
        self.iterations = iterations


@dataclass
class EntryPlan:
    """How one matrix entry is marched and where its data lives.

    ``lines`` are tabulated characteristics (over the z-columns) across which
    the entry may jump, ordered bottom-most first; they split the triangle
    into ``len(lines) + 1`` bands.  A node belongs to band r when exactly r
    lines lie at or below it.  ``dirs[r]`` is the marching direction of band
    r; -1 bands are fed from the free z = 1 edge (zero datum) unless they
    reach the diagonal datum first.
    """

    i: int
    j: int
    dirs: list[int]
    diag_data: np.ndarray | None = None  # (N,) datum on zeta = z, or None
    bottom: bool = False  # bottom nodes carry data (filled by bottom_rule)
    lines: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.dirs) != len(self.lines) + 1:
            raise ValueError("need one direction per band (len(lines) + 1)")

    def region_ids(self, pts: np.ndarray) -> np.ndarray:
        N = pts.size
        ids = np.zeros((N, N), dtype=np.int8)
        for line in self.lines:
            ids += (pts[None, :] >= line[:, None] - _EPS).astype(np.int8)
        return ids


@dataclass
class SolveInfo:
    iterations: int
    last_change: float
    converged: bool


def _rk4_zeta(z0: float, zeta0: np.ndarray, z1: float, lam_row_tab, lam_col_tab, pts) -> np.ndarray:
    """One RK4 step of d zeta/dz from (z0, zeta0) to z = z1 (vector in zeta)."""
    h = z1 - z0
    lr0 = np.interp(z0, pts, lam_row_tab)
    lrm = np.interp(z0 + h / 2.0, pts, lam_row_tab)
    lr1 = np.interp(z1, pts, lam_row_tab)
    k1 = np.interp(zeta0, pts, lam_col_tab) / lr0
    k2 = np.interp(zeta0 + h / 2.0 * k1, pts, lam_col_tab) / lrm
    k3 = np.interp(zeta0 + h / 2.0 * k2, pts, lam_col_tab) / lrm
    k4 = np.interp(zeta0 + h * k3, pts, lam_col_tab) / lr1
    return zeta0 + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def trace_characteristic(
    pts: np.ndarray,
    lam_row_tab: np.ndarray,
    lam_col_tab: np.ndarray,
    z_start: float,
    zeta_start: float,
) -> np.ndarray:
    """Tabulate over all columns the characteristic through (z_start, zeta_start).

    Clipped to the triangle; columns the curve never reaches hold the clipped
    boundary value.
    """
    N = pts.size
    out = np.empty(N)
    k0 = min(int(np.searchsorted(pts, z_start)), N - 1)
    out[k0] = float(np.clip(zeta_start, 0.0, pts[k0]))
    for k in range(k0, N - 1):
        nxt = _rk4_zeta(pts[k], np.asarray(out[k]), pts[k + 1], lam_row_tab, lam_col_tab, pts)
        out[k + 1] = float(np.clip(nxt, 0.0, pts[k + 1]))
    for k in range(k0, 0, -1):
        prv = _rk4_zeta(pts[k], np.asarray(out[k]), pts[k - 1], lam_row_tab, lam_col_tab, pts)
        out[k - 1] = float(np.clip(prv, 0.0, pts[k - 1]))
    return out


def _quadratic_interp(xq: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Three-point Lagrange interpolation on a short monotone table.

    Second-order accurate between nodes (linear interpolation is what limits
    the marching to first order otherwise).  Falls back to linear for tables
    shorter than three points.  Only used inside a jump-free band.
    """
    if xs.size < 3:
        return np.interp(xq, xs, ys)
    idx = np.clip(np.searchsorted(xs, xq) - 1, 0, xs.size - 2)
    c = np.clip(idx, 1, xs.size - 2)
    xm, x0, xp = xs[c - 1], xs[c], xs[c + 1]
    ym, y0, yp = ys[c - 1], ys[c], ys[c + 1]
    lm = (xq - x0) * (xq - xp) / ((xm - x0) * (xm - xp))
    l0 = (xq - xm) * (xq - xp) / ((x0 - xm) * (x0 - xp))
    lp = (xq - xm) * (xq - x0) / ((xp - xm) * (xp - x0))
    return lm * ym + l0 * y0 + lp * yp


def _g_on_triangle(G: np.ndarray, pts: np.ndarray, z: float, zeta: float) -> float:
    """Bilinear read of the lagged coupling table, truncated to the triangle."""
    N = pts.size
    k = max(min(int(np.searchsorted(pts, z, side="right")) - 1, N - 2), 0)
    a = (z - pts[k]) / (pts[k + 1] - pts[k])
    ga = np.interp(min(zeta, pts[k]), pts[: k + 1], G[k, : k + 1])
    gb = np.interp(min(zeta, pts[k + 1]), pts[: k + 2], G[k + 1, : k + 2])
    return float((1.0 - a) * ga + a * gb)


class _LineEdges:
    """One-sided limits marched along a discontinuity line.

    ``upper[k]`` is the limit from above the line at column k, ``lower[k]``
    from below.  Both obey the same transported relation as interior points
    because the line is a characteristic of the entry itself and the coupling
    term does not jump across it (zero coupling diagonal).  ``origin`` tells
    where the line enters the triangle: the corner (0,0) or (1,1), or the
    bottom edge at column ``origin_col`` (a boundary-data jump).
    """

    def __init__(self, line: np.ndarray, pts: np.ndarray):
        self.line = line
        N = pts.size
        self.valid = (line > _EPS) & (line < pts - _EPS)
        self.upper = np.zeros(N)
        self.lower = np.zeros(N)
        inside = np.nonzero(self.valid)[0]
        self.first = int(inside[0]) if inside.size else N
        self.last = int(inside[-1]) if inside.size else -1
        if line[N - 1] >= pts[N - 1] - 1e-9:
            self.origin = "corner11"
            self.origin_col = N - 1
        else:
            below = np.nonzero(line <= _EPS)[0]
            self.origin_col = int(below[-1]) if below.size else 0
            self.origin = "corner00" if self.origin_col == 0 else "bottom"

    def seed(self, side: str, k: int, value: float, pts, lam_col_tab, G):
        """Initialize an edge at its entry column by one transported step."""
        if not self.valid[k]:
            return
        vals = self.upper if side == "upper" else self.lower
        if self.origin == "corner11":
            z_from = pts[self.origin_col]
            z_col = pts[self.origin_col]
        else:
            z_from = 0.0
            z_col = pts[self.origin_col]
        lam_from = np.interp(z_from, pts, lam_col_tab)
        lam_to = np.interp(self.line[k], pts, lam_col_tab)
        g_from = _g_on_triangle(G, pts, z_col, z_from)
        g_to = _g_on_triangle(G, pts, pts[k], self.line[k])
        dzeta = self.line[k] - z_from
        vals[k] = (lam_from * value + dzeta * (g_from + g_to) / 2.0) / lam_to

    def step(self, side: str, k: int, ku: int, pts, lam_col_tab, G):
        if not (self.valid[k] and self.valid[ku]):
            return
        vals = self.upper if side == "upper" else self.lower
        z_from, z_to = self.line[ku], self.line[k]
        lam_from = np.interp(z_from, pts, lam_col_tab)
        lam_to = np.interp(z_to, pts, lam_col_tab)
        g_from = _g_on_triangle(G, pts, pts[ku], z_from)
        g_to = _g_on_triangle(G, pts, pts[k], z_to)
        vals[k] = (lam_from * vals[ku] + (z_to - z_from) * (g_from + g_to) / 2.0) / lam_to


class _EntryState:
    """Per-entry working data shared by the sweeps."""

    def __init__(self, e: EntryPlan, pts: np.ndarray):
        self.plan = e
        self.ids = e.region_ids(pts)
        self.edges = [_LineEdges(line, pts) for line in e.lines]
        self.n_bands = len(e.lines) + 1

    def band_table(self, F: np.ndarray, pts: np.ndarray, ku: int, r: int):
        """Interpolation table of band r in column ku, with edge ghosts."""
        hits = np.nonzero(self.ids[ku, : ku + 1] == r)[0]
        if hits.size == 0:
            lo, hi = 0, ku
            xs = pts[lo : hi + 1]
            ys = F[ku, lo : hi + 1]
            return xs, ys
        lo, hi = int(hits[0]), int(hits[-1])
        xs = pts[lo : hi + 1]
        ys = F[ku, lo : hi + 1]
        if r >= 1:
            edge = self.edges[r - 1]
            if edge.valid[ku] and edge.line[ku] < xs[0] - 1e-9:
                xs = np.concatenate([[edge.line[ku]], xs])
                ys = np.concatenate([[edge.upper[ku]], ys])
        if r < len(self.edges):
            edge = self.edges[r]
            if edge.valid[ku] and edge.line[ku] > xs[-1] + 1e-9:
                xs = np.concatenate([xs, [edge.line[ku]]])
                ys = np.concatenate([ys, [edge.lower[ku]]])
        return xs, ys


def _march_band(
    F: np.ndarray,
    G: np.ndarray,
    st: _EntryState,
    r: int,
    k: int,
    pts: np.ndarray,
    lam_row_tab: np.ndarray,
    lam_col_tab: np.ndarray,
    direction: int,
    bottom_datum_at: Callable[[float], float] | None,
):
    """Update the band-r points of column k by one upstream RK4 step."""
    e = st.plan
    ids = st.ids
    ku = k - 1 if direction > 0 else k + 1
    z_k = pts[k]
    z_u = pts[ku]
    top_band = r == len(e.lines)

    ls = np.nonzero(ids[k, : k + 1] == r)[0]
    if e.diag_data is not None and top_band and k > 0:
        ls = ls[ls < k]  # diagonal node is data
    if e.bottom and k > 0:
        ls = ls[ls > 0]  # bottom node is data
    if ls.size == 0:
        return

    zeta0 = pts[ls]
    zeta_u = _rk4_zeta(z_k, zeta0, z_u, lam_row_tab, lam_col_tab, pts)

    if e.diag_data is not None and top_band:
        crossed_diag = zeta_u > z_u + 1e-15
    else:
        crossed_diag = np.zeros(ls.shape, dtype=bool)
        zeta_u = np.minimum(zeta_u, z_u)
    if e.bottom and bottom_datum_at is not None:
        crossed_bot = (~crossed_diag) & (zeta_u < 0.0)
    else:
        crossed_bot = np.zeros(ls.shape, dtype=bool)
        zeta_u = np.maximum(zeta_u, 0.0)
    interior = ~(crossed_diag | crossed_bot)

    lam_t = np.interp(zeta0, pts, lam_col_tab)
    new_vals = np.empty(ls.size)
    g_target = G[k, ls]

    if np.any(interior):
        zi = zeta_u[interior]
        xs, ys = st.band_table(F, pts, ku, r)
        val_u = _quadratic_interp(zi, xs, ys)
        g_u = np.interp(np.minimum(zi, pts[ku]), pts[: ku + 1], G[ku, : ku + 1])
        lam_u = np.interp(zi, pts, lam_col_tab)
        dzeta = zeta0[interior] - zi
        new_vals[interior] = (lam_u * val_u + dzeta * (g_u + g_target[interior]) / 2.0) / lam_t[interior]

    for idx in np.nonzero(crossed_diag)[0]:
        z0v, zuv = zeta0[idx], zeta_u[idx]
        m = (zuv - z0v) / (z_u - z_k)
        denom = 1.0 - m
        s = (z0v - z_k * m) / denom if abs(denom) > _EPS else (z_k + z_u) / 2.0
        s = float(np.clip(s, min(z_k, z_u), max(z_k, z_u)))
        datum = float(np.interp(s, pts, e.diag_data))
        g_c = _g_on_triangle(G, pts, s, s)
        lam_c = np.interp(s, pts, lam_col_tab)
        dzeta = zeta0[idx] - s
        new_vals[idx] = (lam_c * datum + dzeta * (g_c + g_target[idx]) / 2.0) / lam_t[idx]

    for idx in np.nonzero(crossed_bot)[0]:
        z0v, zuv = zeta0[idx], zeta_u[idx]
        m = (zuv - z0v) / (z_u - z_k)
        s = z_k - z0v / m if abs(m) > _EPS else z_u
        s = float(np.clip(s, min(z_k, z_u), max(z_k, z_u)))
        datum = bottom_datum_at(s)
        g_c = _g_on_triangle(G, pts, s, 0.0)
        lam_c = np.interp(0.0, pts, lam_col_tab)
        dzeta = zeta0[idx]
        new_vals[idx] = (lam_c * datum + dzeta * (g_c + g_target[idx]) / 2.0) / lam_t[idx]

    F[k, ls] = new_vals


def solve_characteristic_system(
    pts: np.ndarray,
    lam_row: np.ndarray,
    lam_col: np.ndarray,
    coeff: np.ndarray | None,
    plans: list[EntryPlan],
    bottom_rule: Callable[[int, np.ndarray], dict] | None,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, SolveInfo]:
    """Iterate sweeps until the field change drops below tol.

    ``bottom_rule(k, F) -> {(i, j): (left, right)}`` supplies the bottom
    datum of column k; the node stores the right limit, the left limit seeds
    line edges rooted at that column.  Returns the field with shape
    (R, C, N, N) indexed [i, j, z_k, zeta_l] (upper triangle zero) and solve
    info; raises :class:`KernelConvergenceError` after max_iter
    non-contracting sweeps.
    """
    R, N = lam_row.shape
    C = lam_col.shape[0]
    F = np.zeros((R, C, N, N))
    tri = np.tril(np.ones((N, N), dtype=bool))
    states = [_EntryState(e, pts) for e in plans]
    have_coeff = coeff is not None and bool(np.any(coeff))
    # bottom datum history per entry: columns x (left, right)
    bot_hist: dict[tuple[int, int], np.ndarray] = {
        (e.i, e.j): np.zeros((N, 2)) for e in plans if e.bottom
    }

    def seed_plus_edges(st: _EntryState, Ge, k: int):
        """Seed +z edge values where a line enters at column k."""
        e = st.plan
        for li, edge in enumerate(st.edges):
            if k != edge.first or edge.origin == "corner11":
                continue
            if e.dirs[li + 1] > 0:
                if edge.origin == "corner00" and e.diag_data is not None:
                    val = float(e.diag_data[0])
                elif (e.i, e.j) in bot_hist:
                    val = bot_hist[(e.i, e.j)][edge.origin_col, 0]  # left limit
                else:
                    val = 0.0
                edge.seed("upper", k, val, pts, lam_col[e.j], Ge)
            if e.dirs[li] > 0 and (e.i, e.j) in bot_hist:
                edge.seed("lower", k, bot_hist[(e.i, e.j)][edge.origin_col, 1], pts, lam_col[e.j], Ge)

    def seed_minus_edges(st: _EntryState, Ge, k: int):
        e = st.plan
        for li, edge in enumerate(st.edges):
            if k != edge.last:
                continue
            if edge.origin == "corner11":
                if e.dirs[li + 1] < 0:
                    val = float(e.diag_data[N - 1]) if e.diag_data is not None else 0.0
                    edge.seed("upper", k, val, pts, lam_col[e.j], Ge)
                if e.dirs[li] < 0:
                    edge.seed("lower", k, 0.0, pts, lam_col[e.j], Ge)
            elif e.dirs[li] < 0:
                # line runs into the free edge z = 1; the band below it
                # starts right on the free datum
                edge.lower[k] = 0.0

    info = SolveInfo(iterations=0, last_change=np.inf, converged=False)
    for sweep in range(1, max_iter + 1):
        F_old = F.copy()
        if have_coeff:
            G = np.einsum("imkl,mjl->ijkl", F_old, coeff)
        else:
            G = np.zeros_like(F_old)

        # free data on z = 1 for -z bands
        for st in states:
            e = st.plan
            for r, d in enumerate(e.dirs):
                if d < 0:
                    cols = np.nonzero(st.ids[N - 1] == r)[0]
                    F[e.i, e.j, N - 1, cols] = 0.0
            if e.diag_data is not None and e.dirs[-1] < 0:
                F[e.i, e.j, N - 1, N - 1] = e.diag_data[N - 1]

        # +z pass
        for k in range(N):
            if bottom_rule is not None:
                for key, val in bottom_rule(k, F).items():
                    pair = tuple(val) if isinstance(val, tuple) else (float(val), float(val))
                    bot_hist[key][k] = pair
                    F[key[0], key[1], k, 0] = pair[1]
            for st in states:
                e = st.plan
                if not any(d > 0 for d in e.dirs) and not e.lines:
                    continue
                Ge = G[e.i, e.j]
                seed_plus_edges(st, Ge, k)
                if k > 0:
                    for li, edge in enumerate(st.edges):
                        if k > edge.first:
                            if e.dirs[li + 1] > 0:
                                edge.step("upper", k, k - 1, pts, lam_col[e.j], Ge)
                            if e.dirs[li] > 0:
                                edge.step("lower", k, k - 1, pts, lam_col[e.j], Ge)
                if not any(d > 0 for d in e.dirs):
                    continue
                bottom_at = _make_bottom_interp(F[e.i, e.j], pts, k) if e.bottom else None
                if k == 0:
                    if e.diag_data is not None and e.dirs[-1] > 0:
                        F[e.i, e.j, 0, 0] = e.diag_data[0]
                    continue
                for r, d in enumerate(e.dirs):
                    if d > 0:
                        _march_band(F[e.i, e.j], Ge, st, r, k, pts, lam_row[e.i], lam_col[e.j], +1, bottom_at)
                if e.diag_data is not None and e.dirs[-1] > 0:
                    F[e.i, e.j, k, k] = e.diag_data[k]

        # -z pass
        for k in range(N - 1, -1, -1):
            for st in states:
                e = st.plan
                if not any(d < 0 for d in e.dirs):
                    continue
                Ge = G[e.i, e.j]
                seed_minus_edges(st, Ge, k)
                if k < N - 1:
                    for li, edge in enumerate(st.edges):
                        if k < edge.last:
                            if e.dirs[li + 1] < 0:
                                edge.step("upper", k, k + 1, pts, lam_col[e.j], Ge)
                            if e.dirs[li] < 0:
                                edge.step("lower", k, k + 1, pts, lam_col[e.j], Ge)
                    for r, d in enumerate(e.dirs):
                        if d < 0:
                            _march_band(F[e.i, e.j], Ge, st, r, k, pts, lam_row[e.i], lam_col[e.j], -1, None)
                    if e.diag_data is not None and e.dirs[-1] < 0 and st.ids[k, k] == len(e.lines):
                        F[e.i, e.j, k, k] = e.diag_data[k]

        F *= tri
        change = float(np.max(np.abs(F - F_old)))
        info = SolveInfo(iterations=sweep, last_change=change, converged=change <= tol)
        if info.converged:
            return F, info
    raise KernelConvergenceError(
        f"kernel iteration did not contract below {tol} in {max_iter} sweeps "
        f"(last change {info.last_change:.3e})",
        info.last_change,
        info.iterations,
    )


def _make_bottom_interp(Fe: np.ndarray, pts: np.ndarray, k: int):
    sup = k + 1

    def bottom_at(s: float) -> float:
        return float(np.interp(s, pts[:sup], Fe[:sup, 0]))

    return bottom_at


def pde_residual(
    F: np.ndarray,
    pts: np.ndarray,
    lam_row: np.ndarray,
    lam_col: np.ndarray,
    coeff: np.ndarray | None,
    plans: list[EntryPlan],
    band_cells: float = 3.0,
    corner_radius: float = 0.05,
    extra_lines: dict[tuple[int, int], list[np.ndarray]] | None = None,
) -> tuple[float, float]:
    """Sup and L2 norm of the PDE residual by central differences.

    Interior triangle points only.  Stencils are skipped within
    ``band_cells`` grid cells of any discontinuity line of the entry or of a
    row sibling feeding its coupling term (the residual is genuinely
    undefined across those), and within ``corner_radius`` of the corners
    (0,0) and (1,1), where boundary-data compatibility fails at finite order
    and higher derivatives of the exact solution are unbounded.
    """
    R, C, N, _ = F.shape
    if coeff is not None and np.any(coeff):
        G = np.einsum("imkl,mjl->ijkl", F, coeff)
    else:
        G = np.zeros_like(F)
    h_max = float(np.max(np.diff(pts)))
    band = band_cells * h_max
    sup = 0.0
    sq = 0.0
    for e in plans:
        lines = list(e.lines)
        if extra_lines:
            lines += extra_lines.get((e.i, e.j), [])
        Fe = F[e.i, e.j]
        P = Fe * lam_col[e.j][None, :]
        for k in range(1, N - 1):
            ls = np.arange(1, k)
            if ls.size == 0:
                continue
            dz = (Fe[k + 1, ls] - Fe[k - 1, ls]) / (pts[k + 1] - pts[k - 1])
            dzeta = (P[k, ls + 1] - P[k, ls - 1]) / (pts[ls + 1] - pts[ls - 1])
            res = lam_row[e.i][k] * dz + dzeta - G[e.i, e.j, k, ls]
            keep = np.ones(ls.size, dtype=bool)
            for line in lines:
                near = np.minimum.reduce(
                    [np.abs(pts[ls] - line[k - 1]), np.abs(pts[ls] - line[k]), np.abs(pts[ls] - line[k + 1])]
                )
                keep &= near > band
            keep &= pts[k] ** 2 + pts[ls] ** 2 > corner_radius**2
            keep &= (1.0 - pts[k]) ** 2 + (1.0 - pts[ls]) ** 2 > corner_radius**2
            vals = res[keep]
            if vals.size:
                sup = max(sup, float(np.max(np.abs(vals))))
                sq += float(np.sum(vals**2)) * (pts[k + 1] - pts[k - 1]) / 2.0 * h_max
    return sup, float(np.sqrt(sq))
