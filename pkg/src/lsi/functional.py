"""Error-plus-penalty functionals with normalised L^p norms, the smooth
regularised absolute value, exact-sup evaluation, nodal gradients and the
residual-powered concentration densities.

All p-th powers are computed in max-factored form, ratios never exceeding 1,
so exponents up to the validated cap of 512 cannot overflow.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .elliptic import EllipticCoefficients, apply_L, assemble_L_matrix
from .grids import (GridFunction, MeasurementSet, diff_ops, interior_measure)
from .observation import ObservationOperator, observe, observe_linearisation

INF = math.inf
P_CAP = 512.0


@dataclass(frozen=True)
class FunctionalParams:
    """Weights of the functional: penalty factor, noise bound and exponent.

    ``p`` is either a finite float in (1, 512] or ``INF`` (sup evaluation
    only; the cap avoids overflow of raw p-th powers)."""

    alpha: float
    delta: float
    p: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if not math.isinf(self.p):
            if not 1.0 < self.p <= P_CAP:
                raise ValueError(f"finite exponent must lie in (1, {P_CAP:g}]")

    def require_finite_p(self) -> float:
        if math.isinf(self.p):
            raise ValueError("operation requires a finite exponent")
        return float(self.p)


@dataclass
class InverseProblem:
    """Data of one reconstruction problem: operator, boundary data, the
    observation kernel with its measurement set and noisy values, plus the
    area measure used by the penalty term."""

    coef: EllipticCoefficients
    g: GridFunction
    K: ObservationOperator
    gamma: MeasurementSet
    q_delta: np.ndarray
    omega: MeasurementSet = None

    def __post_init__(self):
        if self.omega is None:
            self.omega = interior_measure(self.coef.grid)
        self.q_delta = np.asarray(self.q_delta, dtype=float).ravel()
        if self.q_delta.size != len(self.gamma):
            raise ValueError("q_delta length does not match measurement set")
        if self.g.grid != self.coef.grid:
            raise ValueError("boundary data on wrong grid")
        self._cache = {}

    @property
    def grid(self):
        return self.coef.grid

    def operator_matrix(self):
        if "L" not in self._cache:
            self._cache["L"] = assemble_L_matrix(
                self.coef, self.grid).matrix
        return self._cache["L"]

    def operator_matrix_T(self):
        if "LT" not in self._cache:
            self._cache["LT"] = self.operator_matrix().T.tocsr()
        return self._cache["LT"]


@dataclass
class ConcentrationMeasure:
    """Signed density with respect to a discrete base measure."""

    base: MeasurementSet
    density: np.ndarray

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=float).ravel()
        if self.density.size != len(self.base):
            raise ValueError("density length does not match base measure")

    def total_variation(self) -> float:
        return float(np.sum(self.base.weights * np.abs(self.density)))

    def write_csv(self, path) -> None:
        g = self.base.grid
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "weight", "density"])
            for k, node in enumerate(self.base.nodes):
                w.writerow([f"{g.x[node]:.17g}", f"{g.y[node]:.17g}",
                            f"{self.base.weights[k]:.17g}",
                            f"{self.density[k]:.17g}"])


def reg_abs(a, p: float):
    """Smooth floor-1/p surrogate for |a|: sqrt(a^2 + p^-2)."""
    return np.sqrt(np.square(a) + 1.0 / (p * p))


def normalized_Lp_norm(values, weights, p: float) -> float:
    """Weighted-average L^p norm, (sum w|f|^p / sum w)^(1/p), max-factored.

    Non-decreasing in p; equals the max over (positive-weight) nodes at
    p = INF.  An empty input returns 0 (the term drops)."""
    v = np.abs(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        return 0.0
    if math.isinf(p):
        return float(v.max())
    w = np.asarray(weights, dtype=float).ravel()
    m = float(v.max())
    if m == 0.0:
        return 0.0
    what = w / w.sum()
    return float(m * (what @ (v / m) ** p) ** (1.0 / p))


def _density(res: np.ndarray, weights: np.ndarray, p: float):
    """Residual-powered density d_i = reg_i^(p-2) res_i / (W ||reg||^(p-1))
    with reg_i = reg_abs(res_i), plus the norm value, in factored arithmetic.

    The total variation sum(w |d|) is <= 1 by the power-mean inequality."""
    reg = reg_abs(res, p)
    w_total = float(weights.sum())
    what = weights / w_total
    m = float(reg.max())
    t = reg / m
    nhat = float((what @ t ** p) ** (1.0 / p))
    dens = t ** (p - 2.0) * (res / m) / (w_total * nhat ** (p - 1.0))
    return dens, m * nhat


def _data_residual(u: GridFunction, prob: InverseProblem) -> np.ndarray:
    if len(prob.gamma) == 0:
        return np.zeros(0)
    return observe(prob.K, u, prob.gamma) - prob.q_delta


def eval_Ep(u: GridFunction, prob: InverseProblem,
            params: FunctionalParams) -> float:
    """Data misfit plus alpha-weighted operator penalty, both as normalised
    p-norms of the regularised absolute residuals.  At least (1+alpha)/p when
    measurements are present."""
    p = params.require_finite_p()
    res = _data_residual(u, prob)
    t1 = normalized_Lp_norm(reg_abs(res, p), prob.gamma.weights, p)
    lu = apply_L(prob.coef, u).values[prob.omega.nodes]
    t2 = normalized_Lp_norm(reg_abs(lu, p), prob.omega.weights, p)
    return t1 + params.alpha * t2


def eval_Einf(u: GridFunction, prob: InverseProblem,
              params: FunctionalParams) -> float:
    """Exact sup-norm version: no regularisation, max over measured nodes."""
    res = _data_residual(u, prob)
    t1 = normalized_Lp_norm(res, prob.gamma.weights, INF)
    lu = apply_L(prob.coef, u).values[prob.omega.nodes]
    t2 = normalized_Lp_norm(lu, prob.omega.weights, INF)
    return t1 + params.alpha * t2


def value_and_grad(u: GridFunction, prob: InverseProblem,
                   params: FunctionalParams) -> tuple[float, np.ndarray]:
    """Functional value and its nodal gradient with respect to the free
    unknowns (interior nodes; entries at boundary nodes are zeroed).

    The gradient assembles the transposes of the observation linearisation
    and of the operator matrix against the residual-powered densities, so a
    direction test against finite differences of :func:`eval_Ep` is exact up
    to roundoff."""
    p = params.require_finite_p()
    grid = prob.grid
    ops = diff_ops(grid)
    n = grid.n_nodes
    grad = np.zeros(n)
    value = 0.0

    if len(prob.gamma) > 0:
        res = _data_residual(u, prob)
        dens, norm1 = _density(res, prob.gamma.weights, p)
        value += norm1
        kr, kp = observe_linearisation(prob.K, u, prob.gamma)
        cw = prob.gamma.weights * dens
        np.add.at(grad, prob.gamma.nodes, cw * kr)
        if np.any(kp):
            sx = np.zeros(n)
            sy = np.zeros(n)
            sx[prob.gamma.nodes] = cw * kp[:, 0]
            sy[prob.gamma.nodes] = cw * kp[:, 1]
            grad += ops.dx.T @ sx + ops.dy.T @ sy

    lu = prob.operator_matrix() @ u.values
    dens2, norm2 = _density(lu[prob.omega.nodes], prob.omega.weights, p)
    value += params.alpha * norm2
    s = np.zeros(n)
    s[prob.omega.nodes] = prob.omega.weights * dens2
    grad += params.alpha * (prob.operator_matrix_T() @ s)

    grad[grid.boundary_nodes] = 0.0
    return value, grad


def grad_Ep(u: GridFunction, prob: InverseProblem,
            params: FunctionalParams) -> GridFunction:
    """Nodal gradient of :func:`eval_Ep`; see :func:`value_and_grad`."""
    bd = prob.grid.boundary_nodes
    if np.max(np.abs(u.values[bd] - prob.g.values[bd])) > 1e-12:
        raise ValueError("gradient requires u = g on the boundary nodes")
    _, grad = value_and_grad(u, prob, params)
    return GridFunction(u.grid, grad)


def concentration_measures(u: GridFunction, prob: InverseProblem,
                           params: FunctionalParams
                           ) -> tuple[Optional[ConcentrationMeasure],
                                      ConcentrationMeasure]:
    """Signed data and penalty densities built from the p-th powered
    residuals; each has total variation at most 1.  The data measure is None
    when there are no measurements."""
    p = params.require_finite_p()
    nu = None
    if len(prob.gamma) > 0:
        res = _data_residual(u, prob)
        dens, _ = _density(res, prob.gamma.weights, p)
        nu = ConcentrationMeasure(prob.gamma, dens)
    lu = apply_L(prob.coef, u).values[prob.omega.nodes]
    dens2, _ = _density(lu, prob.omega.weights, p)
    mu = ConcentrationMeasure(prob.omega, dens2)
    return nu, mu
