"""Smooth minimisation of the finite-p functional and the exponent
continuation driver.

The minimiser is a limited-memory quasi-Newton iteration (two-loop recursion,
memory 10) with a backtracking line search enforcing sufficient decrease, so
the recorded functional values are non-increasing by construction.  The
stopping rule is on the Euclidean norm of the nodal gradient.  Everything is
plain single-threaded numpy, so identical inputs give bitwise-identical
reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .elliptic import solve_dirichlet
from .functional import (ConcentrationMeasure, FunctionalParams,
                         InverseProblem, concentration_measures,
                         value_and_grad)
from .grids import GridFunction, gradient, hessian
from .observation import observe_linearisation

DEFAULT_MAX_ITER = 5000
DEFAULT_TOL_FACTOR = 1e-8
_ARMIJO_C1 = 1e-4
_MIN_STEP = 1e-20


@dataclass
class SolveReport:
    """Outcome of one fixed-exponent minimisation."""

    u: GridFunction
    p: float
    iterations: int
    grad_norm: float
    E_value: float
    converged: bool
    tol: float
    e_history: np.ndarray

    def __post_init__(self):
        if self.converged and self.grad_norm > self.tol:
            raise ValueError("converged report with grad_norm above tol")


@dataclass
class ContinuationReport:
    """Stage-by-stage record of the increasing-exponent sweep."""

    schedule: tuple
    stages: list  # SolveReport per stage actually run
    sup_diffs: list  # ||u_{k+1} - u_k||_inf, one per stage after the first
    c1_diffs: list  # sup of value and gradient differences
    hessian_diffs: list  # diagnostic only; no acceptance criterion attached
    nus: list  # data concentration measure per stage (None if no data term)
    mus: list  # penalty concentration measure per stage
    stopped_early: bool = False

    @property
    def u_final(self) -> GridFunction:
        return self.stages[-1].u

    @property
    def nu_final(self) -> Optional[ConcentrationMeasure]:
        return self.nus[-1]

    @property
    def mu_final(self) -> ConcentrationMeasure:
        return self.mus[-1]


def minimize_Ep(prob: InverseProblem, params: FunctionalParams,
                init: GridFunction, tol: float | None = None,
                max_iter: int = DEFAULT_MAX_ITER,
                memory: int = 10) -> SolveReport:
    """Minimise the finite-p functional from ``init`` (which must carry the
    Dirichlet data on the boundary).  Non-convergence within ``max_iter`` and
    line-search failure are reported, not raised."""
    grid = prob.grid
    bd = grid.boundary_nodes
    x = init.values.copy()
    if np.max(np.abs(x[bd] - prob.g.values[bd])) > 1e-12:
        raise ValueError("initial guess must equal g on the boundary")
    x[bd] = prob.g.values[bd]

    f, g = value_and_grad(GridFunction(grid, x), prob, params)
    if tol is None:
        tol = DEFAULT_TOL_FACTOR * (1.0 + f)
    if tol <= 0:
        raise ValueError("tolerance must be positive")

    history = [f]
    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    rho_list: list[float] = []
    gnorm = float(np.linalg.norm(g))
    it = 0
    converged = gnorm <= tol

    while not converged and it < max_iter:
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_list), reversed(y_list),
                             reversed(rho_list)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if y_list:
            gamma = (s_list[-1] @ y_list[-1]) / (y_list[-1] @ y_list[-1])
            q *= gamma
        for s, y, rho, a in zip(s_list, y_list, rho_list, reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        slope = float(g @ d)
        if slope >= 0.0:  # not a descent direction; restart from steepest
            d = -g
            slope = -gnorm * gnorm
            s_list.clear(); y_list.clear(); rho_list.clear()

        step = 1.0 if y_list else min(1.0, 1.0 / max(gnorm, 1e-12))
        f_new = f
        x_new = x
        while step >= _MIN_STEP:
            x_try = x + step * d
            f_try, g_try = value_and_grad(GridFunction(grid, x_try), prob,
                                          params)
            if f_try <= f + _ARMIJO_C1 * step * slope:
                f_new, x_new, g_new = f_try, x_try, g_try
                break
            step *= 0.5
        else:
            break  # line-search failure: report the last iterate

        s_vec = x_new - x
        y_vec = g_new - g
        sy = float(s_vec @ y_vec)
        if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            s_list.append(s_vec)
            y_list.append(y_vec)
            rho_list.append(1.0 / sy)
            if len(s_list) > memory:
                s_list.pop(0); y_list.pop(0); rho_list.pop(0)

        assert f_new <= f + 1e-15 * (1 + abs(f)), "descent violated"
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        history.append(f)
        it += 1
        converged = gnorm <= tol

    return SolveReport(u=GridFunction(grid, x), p=params.p, iterations=it,
                       grad_norm=gnorm, E_value=f, converged=converged,
                       tol=float(tol), e_history=np.asarray(history))


def _c1_distance(u: GridFunction, v: GridFunction) -> float:
    du, dv = gradient(u), gradient(v)
    return max(float(np.max(np.abs(u.values - v.values))),
               float(np.max(np.abs(du.dx.values - dv.dx.values))),
               float(np.max(np.abs(du.dy.values - dv.dy.values))))


def _hessian_distance(u: GridFunction, v: GridFunction) -> float:
    hu, hv = hessian(u), hessian(v)
    return max(float(np.max(np.abs(hu.dxx.values - hv.dxx.values))),
               float(np.max(np.abs(hu.dxy.values - hv.dxy.values))),
               float(np.max(np.abs(hu.dyy.values - hv.dyy.values))))


def p_continuation(prob: InverseProblem, alpha: float, delta: float,
                   schedule: Sequence[float], tol: float = DEFAULT_TOL_FACTOR,
                   max_iter: int = DEFAULT_MAX_ITER,
                   stop_early: bool = False) -> ContinuationReport:
    """Run the increasing-exponent sweep, warm-starting each stage from the
    previous minimiser; the first stage starts from the source-free Dirichlet
    solve.  ``tol`` is the relative tolerance factor per stage.

    With ``stop_early`` the sweep ends once the successive sup-difference
    drops below 1e-4 * ||u||_inf twice in a row; the default runs the whole
    schedule so that the final-stage diagnostics always exist.
    """
    schedule = tuple(float(p) for p in schedule)
    if len(schedule) == 0:
        raise ValueError("empty exponent schedule")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("exponent schedule must be strictly increasing")
    if schedule[0] < 2.0 or schedule[-1] > 512.0:
        raise ValueError("schedule must satisfy 2 <= p <= 512")

    u_prev = solve_dirichlet(prob.coef, GridFunction.zeros(prob.grid), prob.g)
    stages, sup_diffs, c1_diffs, hess_diffs, nus, mus = [], [], [], [], [], []
    small_in_a_row = 0
    stopped_early = False
    for p in schedule:
        params = FunctionalParams(alpha=alpha, delta=delta, p=p)
        # per-stage tolerance scales with the warm-start functional value
        stage_tol = tol * (1.0 + _stage_init_value(prob, params, u_prev))
        report = minimize_Ep(prob, params, u_prev, tol=stage_tol,
                             max_iter=max_iter)
        stages.append(report)
        nu, mu = concentration_measures(report.u, prob, params)
        nus.append(nu)
        mus.append(mu)
        if len(stages) > 1:
            prev_u = stages[-2].u
            diff = float(np.max(np.abs(report.u.values - prev_u.values)))
            sup_diffs.append(diff)
            c1_diffs.append(_c1_distance(report.u, prev_u))
            hess_diffs.append(_hessian_distance(report.u, prev_u))
            u_scale = float(np.max(np.abs(report.u.values)))
            if diff < 1e-4 * u_scale:
                small_in_a_row += 1
            else:
                small_in_a_row = 0
            if stop_early and small_in_a_row >= 2:
                stopped_early = True
                break
        u_prev = report.u
    return ContinuationReport(schedule=schedule, stages=stages,
                              sup_diffs=sup_diffs, c1_diffs=c1_diffs,
                              hessian_diffs=hess_diffs, nus=nus, mus=mus,
                              stopped_early=stopped_early)


def _stage_init_value(prob, params, u_init) -> float:
    from .functional import eval_Ep
    return eval_Ep(u_init, prob, params)


def c2_size(phi: GridFunction) -> float:
    """Sup of the values, first and second differences of a test function."""
    d = gradient(phi)
    h = hessian(phi)
    return max(float(np.max(np.abs(phi.values))),
               float(np.max(np.abs(d.dx.values))),
               float(np.max(np.abs(d.dy.values))),
               float(np.max(np.abs(h.dxx.values))),
               float(np.max(np.abs(h.dxy.values))),
               float(np.max(np.abs(h.dyy.values))))


def el_residual(u: GridFunction, nu: Optional[ConcentrationMeasure],
                mu: ConcentrationMeasure, prob: InverseProblem,
                params: FunctionalParams,
                test_basis: Sequence[GridFunction]) -> float:
    """Max over the basis of the absolute weak-form residual of the
    stationarity equation, normalised by each element's C^2 size.

    The weak form integrates the observation linearisation against the data
    density and the operator image of the test function against the penalty
    density; it equals the directional derivative of the functional for
    directions vanishing on the boundary."""
    from .elliptic import apply_L
    params.require_finite_p()
    bd = prob.grid.boundary_nodes
    kr = kp = None
    if nu is not None and len(prob.gamma) > 0:
        kr, kp = observe_linearisation(prob.K, u, prob.gamma)
    worst = 0.0
    for phi in test_basis:
        if np.max(np.abs(phi.values[bd]), initial=0.0) > 0.0:
            raise ValueError("test function must vanish on the boundary")
        size = c2_size(phi)
        if size == 0.0:
            continue  # identically zero element contributes nothing
        total = 0.0
        if kr is not None:
            dphi = gradient(phi)
            gnodes = prob.gamma.nodes
            term = (kr * phi.values[gnodes]
                    + kp[:, 0] * dphi.dx.values[gnodes]
                    + kp[:, 1] * dphi.dy.values[gnodes])
            total += float(np.sum(prob.gamma.weights * nu.density * term))
        lphi = apply_L(prob.coef, phi).values[prob.omega.nodes]
        total += params.alpha * float(
            np.sum(prob.omega.weights * mu.density * lphi))
        worst = max(worst, abs(total) / size)
    return worst
