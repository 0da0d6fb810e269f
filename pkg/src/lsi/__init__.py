"""Sup-norm regularised source identification for linear elliptic equations
on rectangles: forward solver, error functionals with exponent continuation,
concentration diagnostics and a verification harness."""

__version__ = "0.1.0"

from .elliptic import (EllipticCoefficients, apply_L, apply_L_adjoint,
                       assemble_L_matrix, solve_dirichlet)
from .functional import (INF, ConcentrationMeasure, FunctionalParams,
                         InverseProblem, concentration_measures, eval_Einf,
                         eval_Ep, grad_Ep, normalized_Lp_norm, reg_abs)
from .grids import (Grid, GridFunction, MeasurementSet, VectorGridFunction,
                    boundary_measure, gradient, hessian, interior_measure,
                    line_measure, make_grid, point_measure)
from .observation import ObservationOperator, builtin, observe, \
    observe_linearisation
from .optimize import (ContinuationReport, SolveReport, el_residual,
                       minimize_Ep, p_continuation)

__all__ = [
    "__version__", "INF",
    "Grid", "GridFunction", "VectorGridFunction", "MeasurementSet",
    "make_grid", "gradient", "hessian", "boundary_measure",
    "interior_measure", "point_measure", "line_measure",
    "EllipticCoefficients", "apply_L", "apply_L_adjoint",
    "assemble_L_matrix", "solve_dirichlet",
    "ObservationOperator", "builtin", "observe", "observe_linearisation",
    "FunctionalParams", "InverseProblem", "ConcentrationMeasure",
    "reg_abs", "normalized_Lp_norm", "eval_Ep", "eval_Einf", "grad_Ep",
    "concentration_measures",
    "SolveReport", "ContinuationReport", "minimize_Ep", "p_continuation",
    "el_residual",
]
