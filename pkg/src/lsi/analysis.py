"""Verification instruments: pointwise upper envelopes of measured fields,
mass localization of the concentration densities, the a-priori error bounds,
the dual-equation residual away from the measurement set, the dual-norm
source error, the two-sources-one-dataset demonstration and the synthetic
concentration-limit check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .elliptic import EllipticCoefficients, apply_L, solve_dirichlet
from .functional import (ConcentrationMeasure, FunctionalParams,
                         InverseProblem, _density, normalized_Lp_norm)
from .grids import Grid, GridFunction, MeasurementSet, gradient, hessian
from .observation import boundary_normals, observe
from .optimize import c2_size


@dataclass
class LocalizationReport:
    """Fraction of the total variation carried by the near-max residual band."""

    p: float
    eta: float
    mass_fraction: float
    max_residual: float

    def __post_init__(self):
        if not -1e-12 <= self.mass_fraction <= 1.0 + 1e-12:
            raise ValueError("mass fraction outside [0, 1]")


@dataclass
class ErrorBoundReport:
    """Measured left side vs the 2*delta + alpha*penalty right side."""

    lhs: float
    rhs: float
    slack: float
    holds: bool
    mode: str


@dataclass
class NonuniquenessReport:
    f1: GridFunction
    u1: GridFunction
    f2: GridFunction
    u2: GridFunction
    trace_diff: float
    normal_derivative_diff: float
    rate_constant: float  # normal_derivative_diff / h^2
    source_gap: float


# ---------------------------------------------------------------------------
# pointwise upper envelope
# ---------------------------------------------------------------------------

def default_radii(grid: Grid) -> tuple[float, float, float]:
    h = max(grid.hx, grid.hy)
    return (4.0 * h, 2.0 * h, 1.5 * h)


def essential_limsup(f: np.ndarray, ms: MeasurementSet,
                     radii: Sequence[float] | None = None) -> np.ndarray:
    """Discrete upper envelope: at each node, the max of f over the nodes of
    the set within the smallest listed radius whose ball is non-empty.

    Every ball contains its own centre, so f <= f* nodewise and the max of f*
    equals the max of f exactly.  Larger radii dominate smaller ones.
    """
    f = np.asarray(f, dtype=float).ravel()
    if f.size != len(ms):
        raise ValueError("field length does not match measurement set")
    if len(ms) == 0:
        return np.zeros(0)
    if radii is None:
        radii = default_radii(ms.grid)
    radii = [float(r) for r in radii]
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly decreasing")
    h = max(ms.grid.hx, ms.grid.hy)
    if radii[-1] < 1.01 * h:
        raise ValueError("smallest radius must be at least 1.01 * grid spacing")
    pts = ms.grid.coords[ms.nodes]
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    out = np.empty(f.size)
    for k in range(f.size):
        for r in radii[::-1]:  # smallest admissible (non-empty) radius first
            inside = d2[k] <= r * r + 1e-12
            if np.any(inside):
                out[k] = f[inside].max()
                break
    return out


def support_localization(nu: ConcentrationMeasure, residual: np.ndarray,
                         eta: float, p: float = math.nan) -> LocalizationReport:
    """Share of TV mass on nodes whose |residual| reaches (1-eta) of the max."""
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    residual = np.asarray(residual, dtype=float).ravel()
    if residual.size != len(nu.base):
        raise ValueError("residual length does not match measure base")
    tv = nu.total_variation()
    rmax = float(np.max(np.abs(residual), initial=0.0))
    if tv == 0.0:
        return LocalizationReport(p=p, eta=eta, mass_fraction=1.0,
                                  max_residual=rmax)
    band = np.abs(residual) >= (1.0 - eta) * rmax
    mass = float(np.sum(nu.base.weights[band] * np.abs(nu.density[band])))
    return LocalizationReport(p=p, eta=eta, mass_fraction=min(mass / tv, 1.0),
                              max_residual=rmax)


# ---------------------------------------------------------------------------
# error bounds
# ---------------------------------------------------------------------------

def check_error_bound(u_sol: GridFunction, u0: GridFunction,
                      prob: InverseProblem, params: FunctionalParams,
                      mode: str = "Lp", tol: float = 1e-6) -> ErrorBoundReport:
    """Verify the measured data error against 2*delta + alpha * penalty(u0).

    The hypothesis that the noisy data lies within delta of the exact data of
    ``u0`` is asserted, not assumed.  ``mode`` selects normalised p-norms or
    sup norms on both sides.
    """
    q0 = observe(prob.K, u0, prob.gamma)
    if len(prob.gamma) > 0:
        worst = float(np.max(np.abs(prob.q_delta - q0)))
        if worst > params.delta + 1e-12:
            raise ValueError(
                f"data is {worst:.3e} from the exact observations, beyond "
                f"the declared noise level {params.delta:.3e}")
    if mode == "Lp":
        p = params.require_finite_p()
    elif mode == "sup":
        p = math.inf
    else:
        raise ValueError(f"unknown mode {mode!r}")
    q_sol = observe(prob.K, u_sol, prob.gamma)
    lhs = normalized_Lp_norm(q_sol - q0, prob.gamma.weights, p)
    lu0 = apply_L(prob.coef, u0).values[prob.omega.nodes]
    rhs = 2.0 * params.delta + params.alpha * normalized_Lp_norm(
        lu0, prob.omega.weights, p)
    return ErrorBoundReport(lhs=lhs, rhs=rhs, slack=rhs - lhs,
                            holds=bool(lhs <= rhs + tol), mode=mode)


# ---------------------------------------------------------------------------
# dual equation and source error
# ---------------------------------------------------------------------------

def dual_residual(mu: ConcentrationMeasure, coef: EllipticCoefficients,
                  gamma: MeasurementSet,
                  test_basis: Sequence[GridFunction]) -> float:
    """Weak residual of the homogeneous dual equation away from the
    measurement set: max over the basis of |integral of L[phi] d(mu)| divided
    by the C^2 size of phi.  Each test function and its discrete gradient
    must vanish on the measurement nodes and on the boundary."""
    grid = coef.grid
    forbidden = np.union1d(gamma.nodes, grid.boundary_nodes)
    worst = 0.0
    for phi in test_basis:
        d = gradient(phi)
        if (np.max(np.abs(phi.values[forbidden]), initial=0.0) > 0.0
                or np.max(np.abs(d.dx.values[forbidden]), initial=0.0) > 1e-14
                or np.max(np.abs(d.dy.values[forbidden]), initial=0.0) > 1e-14):
            raise ValueError(
                "test function does not vanish (with gradient) on the "
                "measurement set and boundary")
        size = c2_size(phi)
        if size == 0.0:
            continue
        lphi = apply_L(coef, phi).values[mu.base.nodes]
        val = float(np.sum(mu.base.weights * mu.density * lphi))
        worst = max(worst, abs(val) / size)
    return worst


def _w21_norm(phi: GridFunction, weights: np.ndarray) -> float:
    d = gradient(phi)
    h = hessian(phi)
    total = np.abs(phi.values) + np.abs(d.dx.values) + np.abs(d.dy.values) \
        + np.abs(h.dxx.values) + np.abs(h.dxy.values) + np.abs(h.dyy.values)
    return float(np.sum(weights * total))


def source_weak_error(f_approx: GridFunction, f0: GridFunction,
                      region: MeasurementSet,
                      test_basis: Sequence[GridFunction]) -> float:
    """Dual-norm surrogate of the source error over a region: max over the
    basis of |avg (f_approx - f0) phi| / ||phi||_{W^{2,1}} with the discrete
    W^{2,1} norm summing area-weighted absolute values of the function, its
    gradient and its second differences."""
    if len(test_basis) == 0:
        raise ValueError("empty test basis")
    from .grids import area_weights
    aw = area_weights(region.grid)
    diff = f_approx.values[region.nodes] - f0.values[region.nodes]
    w_total = region.total_weight
    worst = 0.0
    for phi in test_basis:
        den = _w21_norm(phi, aw)
        if den == 0.0:
            continue
        num = abs(float(np.sum(region.weights * diff
                               * phi.values[region.nodes]))) / w_total
        worst = max(worst, num / den)
    return worst


# ---------------------------------------------------------------------------
# quartic bump test functions
# ---------------------------------------------------------------------------

def quartic_bump(grid: Grid, center: Sequence[float],
                 radius: float | Sequence[float]) -> GridFunction:
    """Tensor bump (1-t^2)^2 per axis: C^1 at the support edge, value and
    gradient zero outside."""
    cx, cy = center
    try:
        rx, ry = radius  # type: ignore[misc]
    except TypeError:
        rx = ry = float(radius)
    tx = np.clip(np.abs(grid.x - cx) / rx, 0.0, 1.0)
    ty = np.clip(np.abs(grid.y - cy) / ry, 0.0, 1.0)
    vals = (1.0 - tx**2)**2 * (1.0 - ty**2)**2
    return GridFunction(grid, vals)


def bump_lattice(grid: Grid, rect: Sequence[float] | None = None,
                 n: int = 3, fill: float = 0.9) -> list[GridFunction]:
    """n x n lattice of tensor bumps inside a sub-rectangle (default: the
    domain shrunk by one spacing so the bumps vanish on the boundary)."""
    if rect is None:
        m = 1.5 * max(grid.hx, grid.hy)
        rect = (grid.ax + m, grid.bx - m, grid.ay + m, grid.by - m)
    ax, bx, ay, by = rect
    cx = np.linspace(ax, bx, n + 2)[1:-1]
    cy = np.linspace(ay, by, n + 2)[1:-1]
    rx = fill * (bx - ax) / (n + 1)
    ry = fill * (by - ay) / (n + 1)
    return [quartic_bump(grid, (x, y), (rx, ry)) for y in cy for x in cx]


def bumps_avoiding(grid: Grid, forbidden_nodes: np.ndarray,
                   lattice: int = 5, radius: float | None = None,
                   collar: int = 2) -> list[GridFunction]:
    """Lattice bumps whose supports keep a ``collar``-node margin from the
    forbidden nodes and from the boundary, so both the values and the discrete
    gradients vanish there.  Used to build bases supported away from the
    measurement set."""
    if radius is None:
        radius = 0.12 * min(grid.bx - grid.ax, grid.by - grid.ay)
    margin = radius + collar * max(grid.hx, grid.hy)
    pts = grid.coords[np.asarray(forbidden_nodes, dtype=int)]
    cx = np.linspace(grid.ax, grid.bx, lattice + 2)[1:-1]
    cy = np.linspace(grid.ay, grid.by, lattice + 2)[1:-1]
    out = []
    for y in cy:
        for x in cx:
            if (x - margin < grid.ax or x + margin > grid.bx
                    or y - margin < grid.ay or y + margin > grid.by):
                continue
            if pts.size:
                # the support is a box, so measure in Chebyshev distance
                cheb = np.maximum(np.abs(pts[:, 0] - x), np.abs(pts[:, 1] - y))
                if float(cheb.min()) <= margin:
                    continue
            out.append(quartic_bump(grid, (x, y), radius))
    return out


# ---------------------------------------------------------------------------
# two sources, one dataset
# ---------------------------------------------------------------------------

def normal_derivative_values(u: GridFunction) -> np.ndarray:
    """One-sided normal derivative at all boundary nodes (corner convention
    of :func:`lsi.observation.boundary_normals`)."""
    grid = u.grid
    nrm = boundary_normals(grid)[grid.boundary_nodes]
    du = gradient(u)
    bd = grid.boundary_nodes
    return nrm[:, 0] * du.dx.values[bd] + nrm[:, 1] * du.dy.values[bd]


def _corner_mask(grid: Grid) -> np.ndarray:
    bd = grid.boundary_nodes
    i = bd % grid.nx
    j = bd // grid.nx
    return ((i == 0) | (i == grid.nx - 1)) & ((j == 0) | (j == grid.ny - 1))


def match_normal_derivative(coef: EllipticCoefficients, u_base: GridFunction,
                            target: np.ndarray) -> tuple[GridFunction, float]:
    """Add a trace-free correction so the one-sided normal derivative matches
    ``target`` at non-corner boundary nodes (corner stencils of trace-free
    fields vanish identically, so corners cannot and need not be matched).

    The correction is psi with L[psi] = rho, psi = 0 on the boundary, where
    rho is the L-harmonic extension of a boundary density solved for by dense
    least squares; this mirrors the fourth-order two-boundary-condition
    construction.  Returns the corrected field and the achieved sup mismatch
    at non-corner boundary nodes.
    """
    grid = coef.grid
    bd = grid.boundary_nodes
    corners = _corner_mask(grid)
    free = ~corners
    mismatch = np.asarray(target, dtype=float) - normal_derivative_values(u_base)

    zero = GridFunction.zeros(grid)
    cols = []
    fields = []
    for k in range(bd.size):
        gk = np.zeros(grid.n_nodes)
        gk[bd[k]] = 1.0
        rho = solve_dirichlet(coef, zero, GridFunction(grid, gk))
        psi = solve_dirichlet(coef, rho, zero)
        fields.append(psi)
        cols.append(normal_derivative_values(psi)[free])
    t = np.column_stack(cols)
    c, *_ = np.linalg.lstsq(t, mismatch[free], rcond=1e-10)
    psi_vals = np.zeros(grid.n_nodes)
    for ck, fk in zip(c, fields):
        psi_vals += ck * fk.values
    corrected = GridFunction(grid, u_base.values + psi_vals)
    achieved = float(np.max(np.abs(
        np.asarray(target) - normal_derivative_values(corrected))[free]))
    return corrected, achieved


def nonuniqueness_pair(grid: Grid, g: GridFunction, q_data: np.ndarray,
                       h: GridFunction,
                       coef: EllipticCoefficients | None = None
                       ) -> NonuniquenessReport:
    """Construct two source/solution pairs reproducing the same boundary
    trace and (to discretisation accuracy) the same normal-derivative data,
    with sources differing by exactly the harmonic perturbation ``h``.

    Requires the operator to be the Laplacian and ``h`` to be discretely
    harmonic in the interior.
    """
    if coef is None:
        coef = EllipticCoefficients.laplacian(grid)
    interior = grid.interior_nodes
    lh = apply_L(coef, h).values[interior]
    if np.max(np.abs(lh), initial=0.0) > 1e-10:
        raise ValueError(
            f"perturbation is not discretely harmonic (residual {np.max(np.abs(lh)):.3e})")

    base = solve_dirichlet(coef, GridFunction.zeros(grid), g)
    u1, _ = match_normal_derivative(coef, base, np.asarray(q_data, dtype=float))
    f1 = apply_L(coef, u1)

    w = solve_dirichlet(coef, h, GridFunction.zeros(grid))
    u2_raw = GridFunction(grid, u1.values + w.values)
    u2, _ = match_normal_derivative(coef, u2_raw,
                                    normal_derivative_values(u1))
    f2 = GridFunction(grid, f1.values + h.values)

    bd = grid.boundary_nodes
    trace_diff = float(np.max(np.abs(u1.values[bd] - u2.values[bd])))
    nd_diff = float(np.max(np.abs(normal_derivative_values(u1)
                                  - normal_derivative_values(u2))))
    hh = max(grid.hx, grid.hy)
    gap = float(np.max(np.abs(f1.values - f2.values)))
    return NonuniquenessReport(
        f1=f1, u1=u1, f2=f2, u2=u2, trace_diff=trace_diff,
        normal_derivative_diff=nd_diff, rate_constant=nd_diff / hh**2,
        source_gap=gap)


# ---------------------------------------------------------------------------
# synthetic concentration limit
# ---------------------------------------------------------------------------

def concentration_limit_test(f_of_k: Callable[[float], np.ndarray] | Sequence,
                             f_inf: np.ndarray, base: MeasurementSet,
                             k_schedule: Sequence[float],
                             eta: float = 0.05) -> list[LocalizationReport]:
    """Build the powered densities of a uniformly convergent family and track
    how much mass sits in the eta-band of the limit's maximum as the exponent
    grows.  The limit must not vanish identically."""
    f_inf = np.asarray(f_inf, dtype=float).ravel()
    if np.max(np.abs(f_inf), initial=0.0) == 0.0:
        raise ValueError("the uniform limit must not be identically zero")
    if f_inf.size != len(base):
        raise ValueError("field length does not match base measure")
    reports = []
    for idx, k in enumerate(k_schedule):
        fk = f_of_k(k) if callable(f_of_k) else f_of_k[idx]
        fk = np.asarray(fk, dtype=float).ravel()
        dens, _ = _density(fk, base.weights, float(k))
        nu = ConcentrationMeasure(base, dens)
        reports.append(support_localization(nu, f_inf, eta, p=float(k)))
    return reports
