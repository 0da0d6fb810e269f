"""Non-divergence elliptic operators on a grid: application, sparse assembly,
discrete adjoint and the direct Dirichlet solver.

The operator is ``A : D2u + b . Du + c u`` with symmetric A.  Dirichlet data
is imposed by replacing boundary rows with identity rows, keeping the unknown
vector full length.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grids import Grid, GridFunction, diff_ops, gradient, hessian

log = logging.getLogger(__name__)


class FactorizationError(RuntimeError):
    """Raised when the forward system cannot be solved reliably."""


@dataclass
class EllipticCoefficients:
    """Coefficient fields of the operator, with an ellipticity certificate.

    The constructor verifies, node by node, that the smallest eigenvalue of
    the symmetric matrix [[a11, a12], [a12, a22]] is at least ``a0 > 0`` and
    that ``c <= 0``; violations are rejected.
    """

    a11: GridFunction
    a12: GridFunction
    a22: GridFunction
    b1: GridFunction
    b2: GridFunction
    c: GridFunction
    a0: float

    def __post_init__(self):
        if self.a0 <= 0:
            raise ValueError("ellipticity constant a0 must be positive")
        grids = {f.grid for f in (self.a11, self.a12, self.a22,
                                  self.b1, self.b2, self.c)}
        if len(grids) != 1:
            raise ValueError("coefficient fields live on different grids")
        tr = 0.5 * (self.a11.values + self.a22.values)
        det = np.sqrt((0.5 * (self.a11.values - self.a22.values))**2
                      + self.a12.values**2)
        lam_min = tr - det
        bad = lam_min < self.a0 - 1e-14
        if np.any(bad):
            raise ValueError(
                "ellipticity violated: min eigenvalue "
                f"{lam_min.min():.6g} < a0 = {self.a0:.6g}")
        if np.any(self.c.values > 1e-14):
            raise ValueError(
                f"zeroth-order coefficient must be <= 0, max {self.c.values.max():.6g}")

    @property
    def grid(self) -> Grid:
        return self.a11.grid

    @classmethod
    def laplacian(cls, grid: Grid) -> "EllipticCoefficients":
        one = GridFunction(grid, np.ones(grid.n_nodes))
        zero = GridFunction.zeros(grid)
        return cls(one, zero, one, zero, zero, zero, a0=1.0)


@dataclass
class OperatorMatrix:
    """Sparse realisation of the operator with deterministic layout."""

    matrix: sp.csr_matrix
    dirichlet: bool


def apply_L(coef: EllipticCoefficients, u: GridFunction) -> GridFunction:
    """Apply the operator nodewise via the module stencils (linear in u)."""
    if u.grid != coef.grid:
        raise ValueError("grid mismatch between coefficients and field")
    du = gradient(u)
    d2u = hessian(u)
    vals = (coef.a11.values * d2u.dxx.values
            + 2.0 * coef.a12.values * d2u.dxy.values
            + coef.a22.values * d2u.dyy.values
            + coef.b1.values * du.dx.values
            + coef.b2.values * du.dy.values
            + coef.c.values * u.values)
    return GridFunction(u.grid, vals)


def assemble_L_matrix(coef: EllipticCoefficients, grid: Grid,
                      dirichlet: bool = False) -> OperatorMatrix:
    """Assemble the sparse operator; boundary rows are plain stencil rows
    unless ``dirichlet`` is set, in which case they become identity rows."""
    if grid != coef.grid:
        raise ValueError("grid mismatch between coefficients and grid")
    ops = diff_ops(grid)

    def dg(f: GridFunction) -> sp.dia_matrix:
        return sp.diags(f.values)

    m = (dg(coef.a11) @ ops.dxx
         + sp.diags(2.0 * coef.a12.values) @ ops.dxy
         + dg(coef.a22) @ ops.dyy
         + dg(coef.b1) @ ops.dx
         + dg(coef.b2) @ ops.dy
         + dg(coef.c)).tocsr()
    if dirichlet:
        m = m.tolil()
        for k in grid.boundary_nodes:
            m.rows[k] = [int(k)]
            m.data[k] = [1.0]
        m = m.tocsr()
    m.sort_indices()
    m.sum_duplicates()
    return OperatorMatrix(matrix=m, dirichlet=dirichlet)


def apply_L_adjoint(coef: EllipticCoefficients, v: GridFunction) -> GridFunction:
    """Discrete formal adjoint: transpose of the interior block.

    Satisfies ``<L u, v> = <u, L* v>`` in the plain nodal inner product for
    all u, v vanishing on the boundary layer.  The result is zero on boundary
    nodes by definition.
    """
    if v.grid != coef.grid:
        raise ValueError("grid mismatch")
    grid = v.grid
    m = assemble_L_matrix(coef, grid).matrix
    idx = grid.interior_nodes
    block = m[idx][:, idx]
    out = np.zeros(grid.n_nodes)
    out[idx] = block.T @ v.values[idx]
    return GridFunction(grid, out)


def _condition_estimate(m: sp.csr_matrix, lu) -> float:
    n = m.shape[0]
    inv = spla.LinearOperator((n, n), matvec=lu.solve)
    try:
        return float(spla.onenormest(m) * spla.onenormest(inv))
    except Exception:  # pragma: no cover - estimator itself failed
        return float("inf")


def solve_dirichlet(coef: EllipticCoefficients, f: GridFunction,
                    g: GridFunction) -> GridFunction:
    """Solve L[u] = f in the interior with u = g on the boundary, by direct
    sparse factorisation.  Boundary values of the result equal g exactly.

    Raises FactorizationError (with a condition estimate) if the factorisation
    fails or the interior residual exceeds 1e-10 relative.
    """
    grid = coef.grid
    if f.grid != grid or g.grid != grid:
        raise ValueError("grid mismatch")
    op = assemble_L_matrix(coef, grid, dirichlet=True)
    rhs = f.values.copy()
    rhs[grid.boundary_nodes] = g.values[grid.boundary_nodes]
    m = op.matrix.tocsc()
    try:
        lu = spla.splu(m)
    except RuntimeError as exc:
        raise FactorizationError(f"sparse factorisation failed: {exc}") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise FactorizationError(
            "factorisation produced non-finite values "
            f"(condition estimate {_condition_estimate(m, lu):.3e})")
    x[grid.boundary_nodes] = g.values[grid.boundary_nodes]
    interior = grid.interior_nodes
    res = (op.matrix @ x - rhs)[interior]
    rel = np.max(np.abs(res)) / (1.0 + np.max(np.abs(rhs)))
    if rel > 1e-10:
        raise FactorizationError(
            f"ill-conditioned solve: relative residual {rel:.3e}, "
            f"condition estimate {_condition_estimate(m, lu):.3e}")
    # discrete maximum principle watchdog (cross terms may break it; log only)
    if np.all(f.values <= 0) and np.all(g.values >= 0):
        floor = min(0.0, float(g.values.min()))
        if x.min() < floor - 1e-8:
            log.warning("discrete maximum principle violated: min %g < %g",
                        x.min(), floor)
    return GridFunction(grid, x)
