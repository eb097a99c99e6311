"""Plant description and config ingestion.

The plant is a first-order hyperbolic system on z in [0, 1]:

    d/dt x = Lambda(z) d/dz x + A(z) x,
    x_plus(0, t)  = Q0 x_minus(0, t),
    x_minus(1, t) = Q1 x_plus(1, t) + u(t),

with Lambda = diag(Lambda_minus, -Lambda_plus).  The n_minus components of
x_minus travel towards z = 0, the n_plus components of x_plus towards z = 1.
Velocities must be strictly ordered fastest-first within each direction and
strictly positive; the diagonal of A must vanish.  Systems violating the
strict ordering (equal velocities) are rejected: the downstream construction
divides by 1 - sigma_i(1), which strictness keeps well-defined.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .expressions import Expression, ExpressionError, parse_expression
from .numerics import Grid, SpatialFunction, make_grid

__all__ = [
    "HyperbolicSystem",
    "SystemConfig",
    "ValidationReport",
    "ConfigError",
    "DimensionError",
    "validate_system",
    "rank_of_Q0",
    "load_config",
]

ORDERING_MARGIN = 1e-9
DIAGONAL_TOL = 1e-12
RANK_TOL = 1e-10


class ConfigError(ValueError):
    """Malformed or inconsistent configuration document."""


class DimensionError(ValueError):
    """Structurally inconsistent matrices; distinct from validation failure."""


@dataclass
class HyperbolicSystem:
    """A validated-shape plant sampled on one grid."""

    n_minus: int
    n_plus: int
    lambda_minus: list[SpatialFunction]
    lambda_plus: list[SpatialFunction]
    A: list[list[SpatialFunction]]
    Q0: np.ndarray
    Q1: np.ndarray

    def __post_init__(self):
        self.Q0 = np.atleast_2d(np.asarray(self.Q0, dtype=float))
        self.Q1 = np.atleast_2d(np.asarray(self.Q1, dtype=float))
        n = self.n
        if len(self.lambda_minus) != self.n_minus or len(self.lambda_plus) != self.n_plus:
            raise DimensionError("velocity list lengths do not match dimensions")
        if len(self.A) != n or any(len(row) != n for row in self.A):
            raise DimensionError(f"A must be {n}x{n}")
        if self.Q0.shape != (self.n_plus, self.n_minus):
            raise DimensionError(f"Q0 must be {self.n_plus}x{self.n_minus}, got {self.Q0.shape}")
        if self.Q1.shape != (self.n_minus, self.n_plus):
            raise DimensionError(f"Q1 must be {self.n_minus}x{self.n_plus}, got {self.Q1.shape}")

    @property
    def n(self) -> int:
        return self.n_minus + self.n_plus

    @property
    def grid(self) -> Grid:
        return self.lambda_minus[0].grid

    def velocity(self, direction: str, i: int) -> SpatialFunction:
        return (self.lambda_minus if direction == "-" else self.lambda_plus)[i]

    def signed_velocities(self) -> np.ndarray:
        """Table (n, N) of the diagonal of Lambda at the grid points."""
        rows = [lam.right for lam in self.lambda_minus]
        rows += [-lam.right for lam in self.lambda_plus]
        return np.asarray(rows)

    def A_values(self) -> np.ndarray:
        """Table (n, n, N) of A at the grid points."""
        n, N = self.n, self.grid.n
        out = np.empty((n, n, N))
        for i in range(n):
            for j in range(n):
                out[i, j] = self.A[i][j].right
        return out


@dataclass
class ValidationReport:
    ok: bool
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def validate_system(sys: HyperbolicSystem, grid: Grid) -> ValidationReport:
    """Check ordering, positivity and the zero diagonal of A on ``grid``.

    Dimension mismatches raise :class:`DimensionError`; everything else is
    collected into the report with the offending location.
    """
    violations: list[str] = []
    for name, lams in (("-", sys.lambda_minus), ("+", sys.lambda_plus)):
        for i, lam in enumerate(lams):
            if lam.grid.n != grid.n or not np.allclose(lam.grid.points, grid.points):
                raise DimensionError("velocity sampled on a different grid")
            vals = np.minimum(lam.right, lam.left)
            if np.any(vals <= 0.0):
                z = grid.points[int(np.argmin(vals))]
                violations.append(f"lambda{name}[{i + 1}] not positive near z={z:.6g}")
        for i in range(len(lams) - 1):
            gap = np.minimum(lams[i].right - lams[i + 1].right, lams[i].left - lams[i + 1].left)
            if np.any(gap < ORDERING_MARGIN):
                z = grid.points[int(np.argmin(gap))]
                violations.append(
                    f"velocity ordering lambda{name}[{i + 1}] > lambda{name}[{i + 2}] "
                    f"fails at z={z:.6g} (margin {np.min(gap):.3g}); equal-velocity "
                    "systems are out of scope"
                )
    for i in range(sys.n):
        diag = sys.A[i][i]
        worst = np.max(np.abs(np.concatenate([diag.right, diag.left])))
        if worst > DIAGONAL_TOL:
            violations.append(f"A[{i + 1},{i + 1}] must vanish, max |a_ii| = {worst:.3g}")
        for j in range(sys.n):
            if not sys.A[i][j].is_continuous:
                violations.append(f"A[{i + 1},{j + 1}] must be continuous (single-valued)")
    return ValidationReport(ok=not violations, violations=violations)


def rank_of_Q0(sys: HyperbolicSystem, tol: float = RANK_TOL) -> int:
    """Numerical rank of Q0 from singular values >= tol * largest."""
    s = np.linalg.svd(sys.Q0, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s >= tol * s[0]))


# --- configuration -----------------------------------------------------

_TOP_KEYS = {"system", "numerics", "target", "run"}
_SYSTEM_KEYS = {"n_minus", "n_plus", "lambda_minus", "lambda_plus", "A", "Q0", "Q1"}
_NUMERICS_KEYS = {"grid_cells", "dt", "tol", "max_iter"}
_TARGET_KEYS = {"B0", "B1", "B", "B_bar", "R"}
_RUN_KEYS = {
    "mode",
    "t_final",
    "references",
    "output_dir",
    "x0_minus",
    "x0_plus",
    "w0",
    "decimation",
}
MODES = ("finite-time", "general-target", "decoupling")


@dataclass
class SystemConfig:
    """Structured form of a config document; builds systems on any grid."""

    n_minus: int
    n_plus: int
    lambda_minus: list[Expression]
    lambda_plus: list[Expression]
    A: list[list[Expression]]
    Q0: np.ndarray
    Q1: np.ndarray
    grid_cells: int = 100
    dt: float = 2e-3
    tol: float = 1e-8
    max_iter: int = 200
    target: dict[str, Any] = field(default_factory=dict)
    mode: str = "decoupling"
    t_final: float = 3.0
    references: list[dict[str, Any]] = field(default_factory=list)
    output_dir: str = "out"
    x0_minus: list[Expression] = field(default_factory=list)
    x0_plus: list[Expression] = field(default_factory=list)
    w0: list[Expression] = field(default_factory=list)
    decimation: int = 1

    def build_system(self, grid: Grid) -> HyperbolicSystem:
        def sample(expr: Expression) -> SpatialFunction:
            vals = expr(grid.points)
            vals = np.broadcast_to(np.asarray(vals, dtype=float), grid.points.shape).copy()
            return SpatialFunction(grid, vals)

        return HyperbolicSystem(
            n_minus=self.n_minus,
            n_plus=self.n_plus,
            lambda_minus=[sample(e) for e in self.lambda_minus],
            lambda_plus=[sample(e) for e in self.lambda_plus],
            A=[[sample(e) for e in row] for row in self.A],
            Q0=self.Q0,
            Q1=self.Q1,
        )

    def serialize(self) -> str:
        doc = {
            "system": {
                "n_minus": self.n_minus,
                "n_plus": self.n_plus,
                "lambda_minus": [e.to_text() for e in self.lambda_minus],
                "lambda_plus": [e.to_text() for e in self.lambda_plus],
                "A": [[e.to_text() for e in row] for row in self.A],
                "Q0": self.Q0.tolist(),
                "Q1": self.Q1.tolist(),
            },
            "numerics": {
                "grid_cells": self.grid_cells,
                "dt": self.dt,
                "tol": self.tol,
                "max_iter": self.max_iter,
            },
            "target": dict(self.target),
            "run": {
                "mode": self.mode,
                "t_final": self.t_final,
                "references": self.references,
                "output_dir": self.output_dir,
                "x0_minus": [e.to_text() for e in self.x0_minus],
                "x0_plus": [e.to_text() for e in self.x0_plus],
                "w0": [e.to_text() for e in self.w0],
                "decimation": self.decimation,
            },
        }
        return json.dumps(doc, indent=2)


def _require(mapping: dict, key: str, section: str):
    if key not in mapping:
        raise ConfigError(f"missing key '{key}' in section '{section}'")
    return mapping[key]


def _check_keys(mapping: dict, allowed: set[str], section: str):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section '{section}'")


def _exprs(items, section: str, var: str = "z") -> list[Expression]:
    out = []
    for k, item in enumerate(items):
        try:
            if isinstance(item, (int, float)):
                out.append(parse_expression(repr(float(item)), var))
            else:
                out.append(parse_expression(item, var))
        except ExpressionError as exc:
            raise ConfigError(f"bad expression in '{section}' entry {k}: {exc}") from exc
    return out


def _matrix(value, section: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section '{section}' is not a numeric matrix") from exc
    return np.atleast_2d(arr)


def parse_config(text: str) -> SystemConfig:
    """Parse and structurally check a JSON config document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "<top>")
    system = _require(doc, "system", "<top>")
    _check_keys(system, _SYSTEM_KEYS, "system")
    n_minus = int(_require(system, "n_minus", "system"))
    n_plus = int(_require(system, "n_plus", "system"))
    if n_minus < 1 or n_plus < 1:
        raise ConfigError("n_minus and n_plus must be positive")
    lam_m = _exprs(_require(system, "lambda_minus", "system"), "system.lambda_minus")
    lam_p = _exprs(_require(system, "lambda_plus", "system"), "system.lambda_plus")
    if len(lam_m) != n_minus or len(lam_p) != n_plus:
        raise ConfigError("velocity list lengths must match n_minus / n_plus")
    A_rows = _require(system, "A", "system")
    n = n_minus + n_plus
    if len(A_rows) != n or any(len(r) != n for r in A_rows):
        raise ConfigError(f"A must be a {n}x{n} matrix of expressions")
    A = [_exprs(row, f"system.A[{i}]") for i, row in enumerate(A_rows)]
    Q0 = _matrix(_require(system, "Q0", "system"), "system.Q0")
    Q1 = _matrix(_require(system, "Q1", "system"), "system.Q1")

    numerics = doc.get("numerics", {})
    _check_keys(numerics, _NUMERICS_KEYS, "numerics")
    run = doc.get("run", {})
    _check_keys(run, _RUN_KEYS, "run")
    mode = run.get("mode", "decoupling")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; valid modes: {', '.join(MODES)}")
    references = run.get("references", [])
    if not isinstance(references, list):
        raise ConfigError("run.references must be a list")
    target = doc.get("target", {})
    _check_keys(target, _TARGET_KEYS, "target")

    cfg = SystemConfig(
        n_minus=n_minus,
        n_plus=n_plus,
        lambda_minus=lam_m,
        lambda_plus=lam_p,
        A=A,
        Q0=Q0,
        Q1=Q1,
        grid_cells=int(numerics.get("grid_cells", 100)),
        dt=float(numerics.get("dt", 2e-3)),
        tol=float(numerics.get("tol", 1e-8)),
        max_iter=int(numerics.get("max_iter", 200)),
        target={k: target[k] for k in target},
        mode=mode,
        t_final=float(run.get("t_final", 3.0)),
        references=references,
        output_dir=str(run.get("output_dir", "out")),
        x0_minus=_exprs(run.get("x0_minus", ["0"] * n_minus), "run.x0_minus"),
        x0_plus=_exprs(run.get("x0_plus", ["0"] * n_plus), "run.x0_plus"),
        w0=_exprs(run.get("w0", []), "run.w0"),
        decimation=int(run.get("decimation", 1)),
    )
    if len(cfg.x0_minus) != n_minus or len(cfg.x0_plus) != n_plus:
        raise ConfigError("initial-condition lists must match n_minus / n_plus")
    return cfg


def load_config(text: str) -> tuple[HyperbolicSystem, SystemConfig]:
    """Build and validate a system from a config document.

    Returns the system on the base uniform grid together with the parsed
    run parameters.  Validation failures raise :class:`ConfigError`.
    """
    cfg = parse_config(text)
    grid = make_grid(cfg.grid_cells, [])
    try:
        sys = cfg.build_system(grid)
    except ExpressionError as exc:
        raise ConfigError(f"coefficient evaluation failed: {exc}") from exc
    report = validate_system(sys, grid)
    if not report.ok:
        raise ConfigError("system validation failed: " + "; ".join(report.violations))
    return sys, cfg
