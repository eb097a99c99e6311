"""Preliminary kernel: removes the in-domain coupling A(z) from the plant.

The Volterra transformation

    x_tilde(z, t) = x(z, t) - integral_0^z K(z, zeta) x(zeta, t) d zeta

maps the plant onto cascaded transport equations whose only coupling is the
boundary-value term A0(z) x_tilde_minus(0, t).  The kernel satisfies, with
Lambda the signed velocity matrix,

    Lambda(z) dK/dz + d/dzeta (K Lambda(zeta)) = K A(zeta)          on T,
    K(z, z) Lambda(z) - Lambda(z) K(z, z) = A(z)                    on zeta=z,
    [K(z, 0) Lambda(0) (E_minus + E_plus Q0)]_{i<=j} = 0            on zeta=0,

plus freely choosable data on z = 1, set identically to zero here.  The
remaining boundary product defines A0:

    [A0(z)]_{i>j} = [K(z, 0) Lambda(0) (E_minus + E_plus Q0)]_{i>j},

a strictly lower triangular minus block stacked over a full plus block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chars import EntryPlan, SolveInfo, pde_residual, solve_characteristic_system, trace_characteristic
from .numerics import Grid, NumericsError, cumulative_trapezoid_weights
from .system_model import HyperbolicSystem

__all__ = [
    "TriangularKernel",
    "CouplingA0",
    "KernelResiduals",
    "solve_kernel_K",
    "residual_K",
    "extract_A0",
    "transform_state",
    "invert_transform",
    "volterra_matrix",
]


@dataclass
class TriangularKernel:
    """Matrix-valued kernel tabulated on {zeta_l <= z_k}.

    ``values[i, j, k, l]`` is entry (i, j) at (z_k, zeta_l); the upper
    triangle of the (k, l) indices is identically zero.  ``lines`` holds, per
    entry, tabulated characteristics across which the solution may jump.
    """

    dims: tuple[int, int]
    grid: Grid
    values: np.ndarray
    lines: dict[tuple[int, int], list[np.ndarray]] = field(default_factory=dict)
    info: SolveInfo | None = None

    def at_z1(self) -> np.ndarray:
        """K(1, zeta_l) as an (rows, cols, N) table."""
        return self.values[:, :, -1, :]

    def bottom(self) -> np.ndarray:
        """K(z_k, 0) as an (rows, cols, N) table."""
        return self.values[:, :, :, 0]

    def diagonal(self) -> np.ndarray:
        """K(z_k, z_k) as an (rows, cols, N) table."""
        idx = np.arange(self.grid.n)
        return self.values[:, :, idx, idx]


@dataclass
class CouplingA0:
    """Boundary coupling of the cascaded system, split by direction."""

    n_minus: int
    n_plus: int
    values: np.ndarray  # (n, n_minus, N)

    @property
    def minus(self) -> np.ndarray:
        return self.values[: self.n_minus]

    @property
    def plus(self) -> np.ndarray:
        return self.values[self.n_minus :]


def _build_plans(sys: HyperbolicSystem, grid: Grid) -> tuple[list[EntryPlan], np.ndarray, np.ndarray]:
    """Classify every kernel entry by its data boundary and flow direction."""
    n, n_m = sys.n, sys.n_minus
    pts = grid.points
    lam = sys.signed_velocities()  # (n, N) signed
    A = sys.A_values()

    plans: list[EntryPlan] = []
    for i in range(n):
        for j in range(n):
            sign_i = 1 if i < n_m else -1
            sign_j = 1 if j < n_m else -1
            diag = None
            if i != j:
                gap = lam[j] - lam[i]
                if np.any(np.abs(gap) < 1e-12):
                    raise NumericsError(f"coincident signed velocities for entry ({i}, {j})")
                diag = A[i, j] / gap
            if sign_i != sign_j:
                plans.append(EntryPlan(i, j, [+1], diag_data=diag))
                continue
            if i == j:
                if sign_i > 0:
                    plans.append(EntryPlan(i, j, [+1], bottom=True))
                else:
                    plans.append(EntryPlan(i, j, [-1]))
                continue
            in_block_upper = (i < j) if sign_i > 0 else (i - n_m < j - n_m)
            if in_block_upper:
                # faster row: data on the diagonal, or on the bottom below the
                # characteristic through (0, 0) where the datum switches
                sep = trace_characteristic(pts, lam[i], lam[j], 0.0, 0.0)
                if sign_i > 0:
                    plans.append(EntryPlan(i, j, [+1, +1], diag_data=diag, bottom=True, lines=[sep]))
                else:
                    # plus rows carry no bottom condition: points below the
                    # separatrix are fed from the free z = 1 edge instead
                    plans.append(EntryPlan(i, j, [-1, +1], diag_data=diag, lines=[sep]))
            else:
                # slower row: diagonal datum above the characteristic through
                # (1, 1), free z = 1 datum below; both flow in -z
                sep = trace_characteristic(pts, lam[i], lam[j], 1.0, 1.0)
                plans.append(EntryPlan(i, j, [-1, -1], diag_data=diag, lines=[sep]))
    return plans, lam, A


def _bottom_rule_K(sys: HyperbolicSystem):
    """Cascade for the constrained bottom combinations (minus rows, i <= j)."""
    n_m, n_p = sys.n_minus, sys.n_plus
    lam_m0 = np.array([lam.right[0] for lam in sys.lambda_minus])
    lam_p0 = np.array([lam.right[0] for lam in sys.lambda_plus])
    Q0 = sys.Q0

    def rule(k: int, F: np.ndarray) -> dict:
        out = {}
        for i in range(n_m):
            kp = F[i, n_m :, k, 0]  # K^{-+}(z_k, 0)
            row = kp * lam_p0 @ Q0  # [K^{-+} Lambda^+ Q0]_i
            for j in range(i, n_m):
                out[(i, j)] = row[j] / lam_m0[j]
        return out

    return rule


def solve_kernel_K(
    sys: HyperbolicSystem,
    grid: Grid,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> TriangularKernel:
    """Solve the preliminary kernel equations by characteristic sweeps.

    Plain Picard iteration on the coupling term; stops when the sup-norm
    change over all entries drops below ``tol``.  With A identically zero the
    first sweep already reproduces the exact kernel K = 0.
    """
    plans, lam, A = _build_plans(sys, grid)
    F, info = solve_characteristic_system(
        grid.points, lam, lam, A, plans, _bottom_rule_K(sys), tol, max_iter
    )
    lines = {(e.i, e.j): e.lines for e in plans if e.lines}
    return TriangularKernel(dims=(sys.n, sys.n), grid=grid, values=F, lines=lines, info=info)


@dataclass
class KernelResiduals:
    pde_sup: float
    pde_l2: float
    diag_sup: float
    bottom_sup: float

    @property
    def sup(self) -> float:
        return max(self.pde_sup, self.diag_sup, self.bottom_sup)


def residual_K(K: TriangularKernel, sys: HyperbolicSystem) -> KernelResiduals:
    """Measure how well the tabulated kernel satisfies all kernel equations.

    The PDE residual uses central differences on interior triangle points,
    skipping declared discontinuity characteristics.  The diagonal residual
    checks the commutator relation; the bottom residual checks the
    constrained combinations (corner z = 0 excluded: it belongs to the
    diagonal face and the kernel may genuinely jump there).
    """
    grid = K.grid
    plans, lam, A = _build_plans(sys, grid)
    for e in plans:
        e.lines = K.lines.get((e.i, e.j), [])
    pde_sup, pde_l2 = pde_residual(K.values, grid.points, lam, lam, A, plans)

    n, n_m = sys.n, sys.n_minus
    diag = K.diagonal()
    diag_res = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            res = diag[i, j] * (lam[j] - lam[i]) - A[i, j]
            diag_res = max(diag_res, float(np.max(np.abs(res))))

    bottom = K.bottom()  # (n, n, N)
    lam0 = lam[:, 0]
    E = np.zeros((n, n_m))
    E[:n_m] = np.eye(n_m)
    E[n_m:] = sys.Q0
    prod = np.einsum("imk,m,mj->ijk", bottom, lam0, E)
    bottom_res = 0.0
    for i in range(n_m):
        for j in range(i, n_m):
            bottom_res = max(bottom_res, float(np.max(np.abs(prod[i, j, 1:]))))
    return KernelResiduals(pde_sup=pde_sup, pde_l2=pde_l2, diag_sup=diag_res, bottom_sup=bottom_res)


def extract_A0(K: TriangularKernel, sys: HyperbolicSystem) -> CouplingA0:
    """Read the boundary coupling off the solved kernel at zeta = 0."""
    n, n_m = sys.n, sys.n_minus
    lam0 = sys.signed_velocities()[:, 0]
    E = np.zeros((n, n_m))
    E[:n_m] = np.eye(n_m)
    E[n_m:] = sys.Q0
    prod = np.einsum("imk,m,mj->ijk", K.bottom(), lam0, E)
    for i in range(n_m):
        prod[i, i:, :] = 0.0  # constrained combinations define nothing
    return CouplingA0(n_minus=n_m, n_plus=sys.n_plus, values=prod)


def volterra_matrix(K: TriangularKernel) -> np.ndarray:
    """Dense operator V with (x - V x) = transformed state, stacked (n*N,).

    V[(i,k), (j,l)] carries the trapezoid weight of node l on [0, z_k] times
    K[i,j,k,l]; it is block lower triangular in the grid index.
    """
    n = K.dims[0]
    N = K.grid.n
    W = cumulative_trapezoid_weights(K.grid.points)
    V = (K.values * W[None, None, :, :]).transpose(0, 2, 1, 3).reshape(n * N, n * N)
    return V


def transform_state(K: TriangularKernel, x: np.ndarray) -> np.ndarray:
    """Apply the Volterra transformation to a snapshot x of shape (n, N)."""
    n, N = x.shape
    if (n, N) != (K.dims[0], K.grid.n):
        raise NumericsError(f"snapshot shape {x.shape} does not match kernel")
    V = volterra_matrix(K)
    return x - (V @ x.reshape(n * N)).reshape(n, N)


def invert_transform(K: TriangularKernel, xt: np.ndarray) -> np.ndarray:
    """Solve x - integral K x = xt by marching in z (forward substitution).

    At each grid point the quadrature uses already-computed values below and
    the local trapezoid weight moves to the left-hand side; the resulting
    n x n system is singular only if h * ||K|| is of order 2, which is
    reported rather than silently inverted.
    """
    n, N = xt.shape
    if (n, N) != (K.dims[0], K.grid.n):
        raise NumericsError(f"snapshot shape {xt.shape} does not match kernel")
    W = cumulative_trapezoid_weights(K.grid.points)
    x = np.zeros_like(xt)
    for k in range(N):
        acc = xt[:, k].copy()
        if k > 0:
            acc += np.einsum("ijl,jl->i", K.values[:, :, k, :k], x[:, :k] * W[k, :k][None, :])
        M_loc = np.eye(n) - W[k, k] * K.values[:, :, k, k]
        if abs(np.linalg.det(M_loc)) < 1e-12:
            raise NumericsError(f"singular diagonal correction at z={K.grid.points[k]}")
        x[:, k] = np.linalg.solve(M_loc, acc)
    return x
