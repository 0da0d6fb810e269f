"""The acceptance gate: every quantitative claim checked at desk scale.

Frame: 33x33 grid on the unit square, Laplacian (plus one variable-coefficient
case), manufactured field x(1-x)y(1-y)(1 + sin(pi x)/2), measurements on an
interior disc (area weights) and on the boundary (arc-length weights), the
identity and normal-derivative observations, exponent schedule 2..64.

Each criterion function returns a named pass/fail verdict with the measured
numbers in the detail string; :func:`verify` prints one line per criterion
and reports the overall exit status.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from .analysis import (bump_lattice, bumps_avoiding, check_error_bound,
                       concentration_limit_test, essential_limsup,
                       nonuniqueness_pair, quartic_bump, source_weak_error,
                       support_localization)
from .analysis import dual_residual as dual_residual_op
from .elliptic import EllipticCoefficients, apply_L, solve_dirichlet
from .functional import (FunctionalParams, InverseProblem, eval_Ep, grad_Ep)
from .grids import (GridFunction, boundary_measure, interior_measure,
                    make_grid)
from .observation import builtin, observe
from .optimize import el_residual, p_continuation
from .runner import cell_seed, make_noise

ALPHAS = (1e-1, 1e-2, 1e-3)
DELTAS = (0.0, 1e-3, 1e-2)
SCHEDULE = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
SEED = 20240817
TOL = 1e-8
DISC = (0.5, 0.5, 0.25)
ETA = 0.05


@dataclass
class CriterionResult:
    name: str
    passed: bool
    detail: str


@dataclass(eq=False)
class Cell:
    alpha: float
    delta: float
    kind: str
    prob: InverseProblem
    cont: object  # ContinuationReport

    def residual(self, stage: int) -> np.ndarray:
        return (observe(self.prob.K, self.cont.stages[stage].u,
                        self.prob.gamma) - self.prob.q_delta)


def _u0_values(x, y):
    return x * (1 - x) * y * (1 - y) * (1 + 0.5 * np.sin(np.pi * x))


class AcceptanceContext:
    """Shared experiment state: all sweep cells the criteria consume."""

    def __init__(self, tol: float = TOL, progress=None):
        self.tol = tol
        self._say = progress or (lambda msg: None)
        g = make_grid(33, 33, (0, 1, 0, 1))
        self.grid = g
        self.u0 = GridFunction.from_callable(g, _u0_values)
        self.g = self.u0  # carries the boundary trace
        self.coef = EllipticCoefficients.laplacian(g)
        self.f0 = apply_L(self.coef, self.u0)
        self.f0_sup = float(np.max(np.abs(self.f0.values)))
        cx, cy, r = DISC
        self.gamma_disc = interior_measure(
            g, lambda x, y: (x - cx) ** 2 + (y - cy) ** 2 <= r * r)
        self.gamma_bd = boundary_measure(g)
        self.k_id = builtin("identity")
        self.k_nd = builtin("normal_derivative", g)
        self.el_basis = bump_lattice(g)
        self.ring_basis = bumps_avoiding(g, self.gamma_disc.nodes)
        self.interior_basis = bumps_avoiding(g, self.gamma_bd.nodes)

        self.var_coef = EllipticCoefficients(
            a11=GridFunction.from_callable(g, lambda x, y: 1 + 0.25 * x),
            a12=GridFunction.from_callable(g, lambda x, y: 0.05 * x * y),
            a22=GridFunction.from_callable(g, lambda x, y: 1 + 0.25 * y),
            b1=GridFunction.from_callable(g, lambda x, y: 0.2 + 0 * x),
            b2=GridFunction.from_callable(g, lambda x, y: -0.1 + 0 * x),
            c=GridFunction.from_callable(g, lambda x, y: -0.5 + 0 * x),
            a0=0.9)
        self.var_f0 = apply_L(self.var_coef, self.u0)

        self.identity_cells: dict[tuple[float, float], Cell] = {}
        for ia, alpha in enumerate(ALPHAS):
            for idl, delta in enumerate(DELTAS):
                self.identity_cells[(alpha, delta)] = self._make_cell(
                    self.coef, self.k_id, self.gamma_disc, alpha, delta,
                    cell_seed(SEED, ia, idl), "identity-disc")

        self.nd_cells = [
            self._make_cell(self.coef, self.k_nd, self.gamma_bd, 1e-2, d,
                            cell_seed(SEED, 10, i), "nd-boundary")
            for i, d in enumerate((0.0, 1e-2))
        ]
        self.var_cell = self._make_cell(self.var_coef, self.k_id,
                                        self.gamma_disc, 1e-2, 1e-3,
                                        cell_seed(SEED, 20, 0), "var-disc")

        # matched alpha = delta sweep for the source error criterion
        self.matched_cells: list[Cell] = []
        for i, a in enumerate(ALPHAS):
            key = (a, a)
            if key in self.identity_cells:
                self.matched_cells.append(self.identity_cells[key])
            else:
                self.matched_cells.append(self._make_cell(
                    self.coef, self.k_id, self.gamma_disc, a, a,
                    cell_seed(SEED, 30, i), "identity-disc"))

    def _make_cell(self, coef, k_op, gamma, alpha, delta, seed, kind) -> Cell:
        self._say(f"cell {kind} alpha={alpha:g} delta={delta:g}")
        u0 = self.u0
        q0 = observe(k_op, u0, gamma)
        q_delta = make_noise(q0, delta, seed)
        prob = InverseProblem(coef=coef, g=self.g, K=k_op, gamma=gamma,
                              q_delta=q_delta)
        cont = p_continuation(prob, alpha, delta, SCHEDULE, tol=self.tol)
        return Cell(alpha=alpha, delta=delta, kind=kind, prob=prob, cont=cont)

    def all_cells(self) -> list[Cell]:
        return (list(self.identity_cells.values()) + self.nd_cells
                + [self.var_cell]
                + [c for c in self.matched_cells
                   if c not in self.identity_cells.values()])


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def criterion_A1(ctx: AcceptanceContext) -> CriterionResult:
    """Gradient vs central finite differences; 20 directions, p in 2..16."""
    g = ctx.grid
    prob = ctx.identity_cells[(1e-2, 1e-2)].prob
    rng = np.random.default_rng(42)
    interior = g.interior_nodes
    worst = 0.0
    eps = 1e-6
    for p in (2.0, 4.0, 8.0, 16.0):
        params = FunctionalParams(alpha=1e-2, delta=1e-2, p=p)
        u_vals = ctx.g.values.copy()
        u_vals[interior] += 0.1 * rng.standard_normal(interior.size)
        u = GridFunction(g, u_vals)
        grad = grad_Ep(u, prob, params).values
        for _ in range(20):
            phi = np.zeros(g.n_nodes)
            phi[interior] = rng.standard_normal(interior.size)
            phi /= np.linalg.norm(phi)
            up = GridFunction(g, u_vals + eps * phi)
            um = GridFunction(g, u_vals - eps * phi)
            fd = (eval_Ep(up, prob, params) - eval_Ep(um, prob, params)) / (2 * eps)
            rel = abs(grad @ phi - fd) / max(abs(fd), 1e-30)
            worst = max(worst, rel)
    return CriterionResult(
        "A1", worst <= 1e-5,
        f"gradient vs central differences, max rel err {worst:.3e} (tol 1e-5)")


def criterion_A2(ctx: AcceptanceContext) -> CriterionResult:
    """Total variation of both concentration measures at most 1 + 1e-12."""
    worst = 0.0
    for cell in ctx.all_cells():
        for nu, mu in zip(cell.cont.nus, cell.cont.mus):
            if nu is not None:
                worst = max(worst, nu.total_variation())
            worst = max(worst, mu.total_variation())
    return CriterionResult(
        "A2", worst <= 1.0 + 1e-12,
        f"max total variation {worst:.15f} (bound 1 + 1e-12)")


def criterion_A3(ctx: AcceptanceContext) -> CriterionResult:
    """p-norm error bound plus the minimality certificate, every identity cell."""
    worst_gap = -np.inf
    worst_cert = -np.inf
    all_converged = True
    for cell in ctx.identity_cells.values():
        for k, stage in enumerate(cell.cont.stages):
            all_converged &= stage.converged
            params = FunctionalParams(alpha=cell.alpha, delta=cell.delta,
                                      p=stage.p)
            rep = check_error_bound(stage.u, ctx.u0, cell.prob, params,
                                    mode="Lp", tol=1e-6)
            worst_gap = max(worst_gap, rep.lhs - rep.rhs)
            cert = eval_Ep(stage.u, cell.prob, params) \
                - eval_Ep(ctx.u0, cell.prob, params)
            worst_cert = max(worst_cert, cert)
    ok = all_converged and worst_gap <= 1e-6 and worst_cert <= 1e-8
    return CriterionResult(
        "A3", ok,
        f"p-norm bound: max lhs-rhs {worst_gap:.3e} (tol 1e-6), minimality "
        f"certificate max gap {worst_cert:.3e} (tol 1e-8), "
        f"all converged {all_converged}")


def criterion_A4(ctx: AcceptanceContext) -> CriterionResult:
    """Sup-norm bound at the last stage plus the zero-noise linear rate."""
    worst_gap = -np.inf
    worst_rate = -np.inf
    for cell in ctx.identity_cells.values():
        stage = cell.cont.stages[-1]
        params = FunctionalParams(alpha=cell.alpha, delta=cell.delta,
                                  p=stage.p)
        slack = (1.0 + cell.alpha) / stage.p + 1e-6
        rep = check_error_bound(stage.u, ctx.u0, cell.prob, params,
                                mode="sup", tol=slack)
        worst_gap = max(worst_gap, rep.lhs - (rep.rhs + slack))
        if cell.delta == 0.0:
            worst_rate = max(worst_rate,
                             rep.lhs / cell.alpha - ctx.f0_sup)
    ok = worst_gap <= 0.0 and worst_rate <= 0.05
    return CriterionResult(
        "A4", ok,
        f"sup bound at p=64: max overrun {worst_gap:.3e} (<= 0), zero-noise "
        f"rate excess {worst_rate:.3e} (tol 0.05)")


def criterion_A5(ctx: AcceptanceContext) -> CriterionResult:
    """Weak stationarity residual small at minimisers, large at the start."""
    worst_ratio = 0.0
    worst_sep = np.inf
    for cell in ctx.all_cells():
        for k, stage in enumerate(cell.cont.stages):
            params = FunctionalParams(alpha=cell.alpha, delta=cell.delta,
                                      p=stage.p)
            res = el_residual(stage.u, cell.cont.nus[k], cell.cont.mus[k],
                              cell.prob, params, ctx.el_basis)
            worst_ratio = max(worst_ratio, res / (10.0 * stage.tol))
        # compare against the weak residual at the cold start, final exponent
        stage = cell.cont.stages[-1]
        params = FunctionalParams(alpha=cell.alpha, delta=cell.delta,
                                  p=stage.p)
        init = solve_dirichlet(cell.prob.coef, GridFunction.zeros(ctx.grid),
                               ctx.g)
        from .functional import concentration_measures
        nu0, mu0 = concentration_measures(init, cell.prob, params)
        res0 = el_residual(init, nu0, mu0, cell.prob, params, ctx.el_basis)
        res1 = el_residual(stage.u, cell.cont.nus[-1], cell.cont.mus[-1],
                           cell.prob, params, ctx.el_basis)
        worst_sep = min(worst_sep, res0 / max(res1, 1e-300))
    ok = worst_ratio <= 1.0 and worst_sep >= 10.0
    return CriterionResult(
        "A5", ok,
        f"max residual / (10 tol) = {worst_ratio:.3e} (<= 1), min "
        f"initial/converged separation {worst_sep:.3e} (>= 10)")


def criterion_A6(ctx: AcceptanceContext) -> CriterionResult:
    """Mass localization grows along p and reaches 0.90 on noisy cells."""
    worst_final = np.inf
    worst_drop = -np.inf
    tail = [i for i, p in enumerate(SCHEDULE) if p >= 8.0]
    for alpha in ALPHAS:
        cell = ctx.identity_cells[(alpha, 1e-2)]
        fracs = []
        for k in tail:
            loc = support_localization(cell.cont.nus[k], cell.residual(k),
                                       ETA, p=SCHEDULE[k])
            fracs.append(loc.mass_fraction)
        drops = [a - b for a, b in zip(fracs, fracs[1:])]
        worst_drop = max(worst_drop, max(drops) if drops else -np.inf)
        worst_final = min(worst_final, fracs[-1])
    ok = worst_drop <= 1e-6 and worst_final >= 0.90
    return CriterionResult(
        "A6", ok,
        f"localization along p: worst decrease {worst_drop:.3e} (tie tol "
        f"1e-6), min final mass fraction {worst_final:.4f} (>= 0.90)")


def criterion_A7(ctx: AcceptanceContext) -> CriterionResult:
    """Successive sup-differences shrink; the final one is small."""
    worst_incr = -np.inf
    worst_final = -np.inf
    for cell in ctx.all_cells():
        diffs = cell.cont.sup_diffs
        tail = diffs[-3:]
        for a, b in zip(tail, tail[1:]):
            worst_incr = max(worst_incr, b - a)
        u_sup = float(np.max(np.abs(cell.cont.u_final.values)))
        worst_final = max(worst_final, diffs[-1] / (1e-3 * u_sup))
    ok = worst_incr <= 1e-12 and worst_final <= 1.0
    return CriterionResult(
        "A7", ok,
        f"sup-difference tail: worst increase {worst_incr:.3e} (<= 1e-12), "
        f"max final diff / (1e-3 ||u||) = {worst_final:.3f} (<= 1)")


def criterion_A8(ctx: AcceptanceContext) -> CriterionResult:
    """Dual equation residual away from the measurement set."""
    worst = 0.0
    for cell in ctx.all_cells():
        basis = ctx.ring_basis if cell.prob.gamma is not ctx.gamma_bd \
            else ctx.interior_basis
        for k, stage in enumerate(cell.cont.stages):
            res = dual_residual_op(cell.cont.mus[k], cell.prob.coef,
                                   cell.prob.gamma, basis)
            worst = max(worst, res / (10.0 * stage.tol))
    return CriterionResult(
        "A8", worst <= 1.0,
        f"max dual residual / (10 tol) = {worst:.3e} (<= 1)")


def criterion_A9(ctx: AcceptanceContext) -> CriterionResult:
    """Two sources, one dataset: exact trace match, O(h^2) data match,
    source gap exactly 0.5 for the tilt perturbation."""
    g = ctx.grid
    h_fn = GridFunction.from_callable(g, lambda x, y: x - 0.5)
    q_data = observe(ctx.k_nd, ctx.u0, ctx.gamma_bd)
    rep = nonuniqueness_pair(g, ctx.g, q_data, h_fn, coef=ctx.coef)
    ok = (rep.trace_diff == 0.0 and rep.rate_constant <= 10.0
          and rep.source_gap == 0.5)
    return CriterionResult(
        "A9", ok,
        f"trace diff {rep.trace_diff:.1e} (exact 0), normal-derivative diff "
        f"{rep.normal_derivative_diff:.3e} = {rep.rate_constant:.3e} * h^2 "
        f"(C <= 10), source gap {rep.source_gap!r} (exactly 0.5)")


def criterion_A10(ctx: AcceptanceContext) -> CriterionResult:
    """Upper-envelope axioms on 50 random fields."""
    ms = interior_measure(ctx.grid)
    rng = np.random.default_rng(7)
    h = max(ctx.grid.hx, ctx.grid.hy)
    ok = True
    for _ in range(50):
        f = rng.standard_normal(len(ms))
        fs = essential_limsup(f, ms)
        fs_wide = essential_limsup(f, ms, radii=(4.0 * h,))
        ok &= bool(np.all(f <= fs))
        ok &= float(fs.max()) == float(f.max())
        ok &= bool(np.all(fs_wide >= fs))
        if not ok:
            break
    return CriterionResult(
        "A10", ok,
        "upper envelope: f <= f* nodewise, max f* = max f, wider radius "
        "dominates (50 random fields, exact)")


def criterion_A11(ctx: AcceptanceContext) -> CriterionResult:
    """Synthetic concentration limit for a bump with a unique maximum."""
    ms = interior_measure(ctx.grid)
    bump = quartic_bump(ctx.grid, (0.5, 0.5), 0.3)
    f_inf = bump.values[ms.nodes]
    ks = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
    reports = concentration_limit_test(lambda k: f_inf, f_inf, ms, ks, eta=ETA)
    fracs = [r.mass_fraction for r in reports]
    drops = [a - b for a, b in zip(fracs, fracs[1:])]
    ok = max(drops) <= 1e-6 and fracs[-1] >= 0.95
    return CriterionResult(
        "A11", ok,
        f"bump family: mass fraction at k=64 is {fracs[-1]:.4f} (>= 0.95), "
        f"worst decrease {max(drops):.3e} (tie tol 1e-6)")


def criterion_A12(ctx: AcceptanceContext) -> CriterionResult:
    """Dual-norm source error decreases along the matched alpha = delta sweep
    with a stable measured constant."""
    disc_bumps = _disc_bumps(ctx)
    values, ratios = [], []
    for cell in ctx.matched_cells:
        f_approx = apply_L(ctx.coef, cell.cont.u_final)
        val = source_weak_error(f_approx, ctx.f0, ctx.gamma_disc, disc_bumps)
        rhs = 2.0 * cell.delta + cell.alpha * ctx.f0_sup
        values.append(val)
        ratios.append(val / rhs)
    decreasing = all(b < a for a, b in zip(values, values[1:]))
    finite = all(np.isfinite(r) for r in ratios)
    stable = max(ratios) <= 3.0 * min(ratios)
    ok = decreasing and finite and stable
    vals = ", ".join(f"{v:.3e}" for v in values)
    rats = ", ".join(f"{r:.3f}" for r in ratios)
    return CriterionResult(
        "A12", ok,
        f"source weak error [{vals}] decreasing {decreasing}; measured "
        f"constants [{rats}] stable within factor 3: {stable}")


def _disc_bumps(ctx: AcceptanceContext) -> list[GridFunction]:
    cx, cy, r = DISC
    half = r / np.sqrt(2.0) * 0.92
    return bump_lattice(ctx.grid, rect=(cx - half, cx + half,
                                        cy - half, cy + half), n=3)


CRITERIA = [criterion_A1, criterion_A2, criterion_A3, criterion_A4,
            criterion_A5, criterion_A6, criterion_A7, criterion_A8,
            criterion_A9, criterion_A10, criterion_A11, criterion_A12]


def verify(stream=None, progress_stream=None, fault: str | None = None,
           ctx: AcceptanceContext | None = None) -> int:
    """Run every acceptance criterion; print one verdict line per criterion.

    ``fault`` names a criterion to force-fail (negative control for the
    harness itself).  Returns 0 iff everything passed.
    """
    out = stream or sys.stdout
    err = progress_stream if progress_stream is not None else sys.stderr
    if ctx is None:
        ctx = AcceptanceContext(progress=lambda m: print(m, file=err))
    failures = 0
    for fn in CRITERIA:
        result = fn(ctx)
        if fault is not None and result.name == fault:
            result = CriterionResult(result.name, False,
                                     f"injected fault ({result.detail})")
        status = "PASS" if result.passed else "FAIL"
        print(f"{result.name} {status} {result.detail}", file=out)
        failures += 0 if result.passed else 1
    print(f"{len(CRITERIA) - failures}/{len(CRITERIA)} criteria passed",
          file=out)
    return 0 if failures == 0 else 1
