"""Pointwise observation operators K(x, u, Du) on a measurement set, their
linearisations, and the built-in operators (identity, normal derivative,
horizontal-line trace).

An operator supplies vectorised callables

    eval(xy, r, p) -> (n,)        value
    dr(xy, r, p)   -> (n,)        d/dr
    dp(xy, r, p)   -> (n, 2)      d/dp

with ``xy`` of shape (n, 2), ``r`` of shape (n,) and ``p`` of shape (n, 2).
The declared derivatives are validated against central finite differences at
construction time.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .grids import Grid, GridFunction, MeasurementSet, gradient

_FD_STEP = 1e-6
_FD_RTOL = 1e-5


class ObservationOperator:
    """Observation kernel with validated first derivatives in (r, p)."""

    def __init__(self, eval_fn: Callable, dr_fn: Callable, dp_fn: Callable,
                 label: str, sample_points: np.ndarray | None = None,
                 validate: bool = True):
        self.eval = eval_fn
        self.dr = dr_fn
        self.dp = dp_fn
        self.label = label
        if validate:
            self._check_derivatives(sample_points)

    def _check_derivatives(self, sample_points):
        rng = np.random.default_rng(1905)
        n = 100
        if sample_points is None:
            xy = rng.uniform(0.0, 1.0, size=(n, 2))
        else:
            pts = np.asarray(sample_points, dtype=float).reshape(-1, 2)
            xy = pts[rng.integers(0, len(pts), size=n)]
        r = rng.uniform(-2.0, 2.0, size=n)
        p = rng.uniform(-2.0, 2.0, size=(n, 2))

        dr = np.asarray(self.dr(xy, r, p), dtype=float)
        h = _FD_STEP * (1.0 + np.abs(r))
        fd_r = (self.eval(xy, r + h, p) - self.eval(xy, r - h, p)) / (2 * h)
        if np.max(np.abs(dr - fd_r) / (1.0 + np.abs(dr))) > _FD_RTOL:
            raise ValueError(
                f"operator '{self.label}': dr disagrees with finite differences")

        dp = np.asarray(self.dp(xy, r, p), dtype=float)
        for k in range(2):
            e = np.zeros((n, 2))
            e[:, k] = _FD_STEP * (1.0 + np.abs(p[:, k]))
            fd = (self.eval(xy, r, p + e) - self.eval(xy, r, p - e)) \
                / (2 * e[:, k])
            if np.max(np.abs(dp[:, k] - fd) / (1.0 + np.abs(dp[:, k]))) > _FD_RTOL:
                raise ValueError(
                    f"operator '{self.label}': dp[{k}] disagrees with finite "
                    "differences")


def boundary_normals(grid: Grid) -> np.ndarray:
    """Outward unit normals on boundary nodes, NaN at interior nodes.

    At the four corners the normal is the normalised sum of the two face
    normals (the rectangle replaces the smooth boundary the theory assumes,
    so a corner convention is required).
    """
    n = np.full((grid.n_nodes, 2), np.nan)
    i = np.arange(grid.n_nodes) % grid.nx
    j = np.arange(grid.n_nodes) // grid.nx
    nxv = np.where(i == 0, -1.0, 0.0) + np.where(i == grid.nx - 1, 1.0, 0.0)
    nyv = np.where(j == 0, -1.0, 0.0) + np.where(j == grid.ny - 1, 1.0, 0.0)
    on_bd = grid.boundary_mask
    norm = np.hypot(nxv, nyv)
    n[on_bd, 0] = nxv[on_bd] / norm[on_bd]
    n[on_bd, 1] = nyv[on_bd] / norm[on_bd]
    return n


def builtin(label: str, grid: Grid | None = None) -> ObservationOperator:
    """Return one of the named operators.

    * ``identity``: K(x, r, p) = r.
    * ``normal_derivative``: K(x, r, p) = p . n(x); requires the grid and is
      defined only at boundary nodes.
    * ``trace_on_line``: the identity kernel; the restriction to a horizontal
      line is carried by the measurement set paired with it.
    """
    if label in ("identity", "trace_on_line"):
        return ObservationOperator(
            eval_fn=lambda xy, r, p: np.asarray(r, dtype=float),
            dr_fn=lambda xy, r, p: np.ones(len(np.atleast_1d(r))),
            dp_fn=lambda xy, r, p: np.zeros((len(np.atleast_1d(r)), 2)),
            label=label)
    if label == "normal_derivative":
        if grid is None:
            raise ValueError("normal_derivative requires the grid")
        normals = boundary_normals(grid)

        def _lookup(xy):
            xy = np.asarray(xy, dtype=float).reshape(-1, 2)
            i = np.rint((xy[:, 0] - grid.ax) / grid.hx).astype(int)
            j = np.rint((xy[:, 1] - grid.ay) / grid.hy).astype(int)
            ok = ((np.abs(grid.ax + i * grid.hx - xy[:, 0]) < 1e-9 * (1 + grid.hx))
                  & (np.abs(grid.ay + j * grid.hy - xy[:, 1]) < 1e-9 * (1 + grid.hy))
                  & (i >= 0) & (i < grid.nx) & (j >= 0) & (j < grid.ny))
            if not np.all(ok):
                raise ValueError("normal_derivative evaluated off the grid")
            nrm = normals[j * grid.nx + i]
            if np.any(np.isnan(nrm)):
                raise ValueError(
                    "normal_derivative evaluated at an interior node")
            return nrm

        return ObservationOperator(
            eval_fn=lambda xy, r, p: np.sum(_lookup(xy) * p, axis=1),
            dr_fn=lambda xy, r, p: np.zeros(len(np.atleast_1d(r))),
            dp_fn=lambda xy, r, p: _lookup(xy),
            label="normal_derivative",
            sample_points=grid.coords[grid.boundary_nodes])
    raise ValueError(f"unknown builtin observation operator {label!r}")


def _states(u: GridFunction, gamma: MeasurementSet):
    xy = u.grid.coords[gamma.nodes]
    r = u.values[gamma.nodes]
    du = gradient(u)
    p = np.column_stack([du.dx.values[gamma.nodes],
                         du.dy.values[gamma.nodes]])
    return xy, r, p


def observe(k: ObservationOperator, u: GridFunction,
            gamma: MeasurementSet) -> np.ndarray:
    """K(x, u(x), Du(x)) per measurement node, in the set's node order."""
    if len(gamma) == 0:
        return np.zeros(0)
    xy, r, p = _states(u, gamma)
    return np.asarray(k.eval(xy, r, p), dtype=float)


def observe_linearisation(k: ObservationOperator, u: GridFunction,
                          gamma: MeasurementSet) -> tuple[np.ndarray, np.ndarray]:
    """Per-node (K_r, K_p) of the directional derivative of the observation:
    d/de observe(u + e*phi) = K_r * phi + K_p . D(phi) at e = 0."""
    if len(gamma) == 0:
        return np.zeros(0), np.zeros((0, 2))
    xy, r, p = _states(u, gamma)
    kr = np.asarray(k.dr(xy, r, p), dtype=float)
    kp = np.asarray(k.dp(xy, r, p), dtype=float).reshape(len(gamma), 2)
    return kr, kp
