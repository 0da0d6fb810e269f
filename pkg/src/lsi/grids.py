"""Uniform rectangular grids, nodal fields, finite-difference calculus and
discrete measures.

Conventions
-----------
Values are stored row-major with the y-index outermost: node (i, j) lives at
flat index ``j*nx + i`` and at coordinates ``(ax + i*hx, ay + j*hy)``.  All
derivative stencils are second order: central differences at interior nodes,
one-sided (first derivative) or shifted (second difference) variants on the
boundary layer, so every stencil is exact on per-direction quadratics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on the rectangle [ax, bx] x [ay, by]."""

    nx: int
    ny: int
    ax: float
    bx: float
    ay: float
    by: float

    @property
    def hx(self) -> float:
        return (self.bx - self.ax) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.by - self.ay) / (self.ny - 1)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        """(ny, nx), the shape of a 2-D view of nodal values."""
        return (self.ny, self.nx)

    def node_index(self, i: int, j: int) -> int:
        return j * self.nx + i

    @cached_property
    def x(self) -> np.ndarray:
        """Flattened x coordinates, row-major."""
        xs = self.ax + self.hx * np.arange(self.nx)
        return np.tile(xs, self.ny)

    @cached_property
    def y(self) -> np.ndarray:
        ys = self.ay + self.hy * np.arange(self.ny)
        return np.repeat(ys, self.nx)

    @cached_property
    def coords(self) -> np.ndarray:
        """(n_nodes, 2) array of node coordinates."""
        return np.column_stack([self.x, self.y])

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros((self.ny, self.nx), dtype=bool)
        m[0, :] = m[-1, :] = True
        m[:, 0] = m[:, -1] = True
        m = m.ravel()
        m.flags.writeable = False
        return m

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)


def make_grid(nx: int, ny: int, rect: Sequence[float]) -> Grid:
    """Build a grid with exact spacings ``(bx-ax)/(nx-1)``, ``(by-ay)/(ny-1)``.

    Parameters
    ----------
    nx, ny : int
        Node counts per axis; at least 3 so that all stencils are defined.
    rect : sequence of 4 floats
        (ax, bx, ay, by) with bx > ax and by > ay.
    """
    ax, bx, ay, by = (float(v) for v in rect)
    if nx < 3 or ny < 3:
        raise ValueError(f"grid too small: need nx, ny >= 3, got ({nx}, {ny})")
    if not (bx > ax and by > ay):
        raise ValueError(f"degenerate rectangle: {rect!r}")
    return Grid(int(nx), int(ny), ax, bx, ay, by)


@dataclass
class GridFunction:
    """A scalar nodal field on a grid; values are row-major, finite floats."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float).ravel()
        if v.size != self.grid.n_nodes:
            raise ValueError(
                f"value count {v.size} != nodes {self.grid.n_nodes}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        self.values = v

    @classmethod
    def from_callable(cls, grid: Grid, fn: Callable) -> "GridFunction":
        return cls(grid, np.asarray(fn(grid.x, grid.y), dtype=float))

    @classmethod
    def zeros(cls, grid: Grid) -> "GridFunction":
        return cls(grid, np.zeros(grid.n_nodes))

    def field2d(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, a: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * float(a))

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return GridFunction(self.grid, -self.values)


@dataclass
class VectorGridFunction:
    """First-derivative pair (du/dx, du/dy) on a common grid."""

    dx: GridFunction
    dy: GridFunction

    def __post_init__(self):
        if self.dx.grid != self.dy.grid:
            raise ValueError("vector components live on different grids")

    @property
    def grid(self) -> Grid:
        return self.dx.grid


@dataclass
class HessianFunction:
    """Symmetric second-derivative field; the cross entry is stored once."""

    dxx: GridFunction
    dxy: GridFunction
    dyy: GridFunction


@dataclass
class MeasurementSet:
    """Discrete measure: node indices with strictly positive weights.

    ``gamma`` records the nominal Hausdorff dimension of the set the measure
    stands in for (0 for counting, n-1 for arc length, n for area).  An empty
    set is legal and means "no measurements".
    """

    grid: Grid
    nodes: np.ndarray
    weights: np.ndarray
    gamma: float

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=int).ravel()
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.nodes.size != self.weights.size:
            raise ValueError("nodes and weights length mismatch")
        if self.nodes.size:
            if self.nodes.min() < 0 or self.nodes.max() >= self.grid.n_nodes:
                raise ValueError("node index out of range")
            if np.unique(self.nodes).size != self.nodes.size:
                raise ValueError("duplicate nodes in measurement set")
            if not np.all(self.weights > 0):
                raise ValueError("weights must be strictly positive")
        if not (0.0 <= self.gamma <= 2.0):
            raise ValueError("gamma must lie in [0, n] = [0, 2]")

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return self.nodes.size


# ---------------------------------------------------------------------------
# finite-difference calculus
# ---------------------------------------------------------------------------

def gradient(u: GridFunction) -> VectorGridFunction:
    """Second-order gradient; one-sided second-order rows on the boundary."""
    g = u.grid
    a = u.field2d()
    duy, dux = np.gradient(a, g.hy, g.hx, edge_order=2)
    return VectorGridFunction(GridFunction(g, dux.ravel()),
                              GridFunction(g, duy.ravel()))


def _second_diff(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, -1)
    d = np.empty_like(a)
    d[..., 1:-1] = a[..., 2:] - 2.0 * a[..., 1:-1] + a[..., :-2]
    # boundary rows reuse the nearest interior stencil (exact on quadratics)
    d[..., 0] = a[..., 0] - 2.0 * a[..., 1] + a[..., 2]
    d[..., -1] = a[..., -1] - 2.0 * a[..., -2] + a[..., -3]
    return np.moveaxis(d / h**2, -1, axis)


def hessian(u: GridFunction) -> HessianFunction:
    """3-point second differences per axis; the cross term composes the two
    first-derivative stencils (their matrices commute on tensor grids)."""
    g = u.grid
    a = u.field2d()
    dxx = _second_diff(a, g.hx, axis=1)
    dyy = _second_diff(a, g.hy, axis=0)
    dux = np.gradient(a, g.hx, axis=1, edge_order=2)
    dxy = np.gradient(dux, g.hy, axis=0, edge_order=2)
    return HessianFunction(GridFunction(g, dxx.ravel()),
                           GridFunction(g, dxy.ravel()),
                           GridFunction(g, dyy.ravel()))


# ---------------------------------------------------------------------------
# sparse differentiation matrices (assembly path; same stencils as above)
# ---------------------------------------------------------------------------

def _d1_matrix(n: int, h: float) -> sp.csr_matrix:
    m = sp.lil_matrix((n, n))
    for k in range(1, n - 1):
        m[k, k - 1] = -0.5 / h
        m[k, k + 1] = 0.5 / h
    m[0, 0], m[0, 1], m[0, 2] = -1.5 / h, 2.0 / h, -0.5 / h
    m[n - 1, n - 1], m[n - 1, n - 2], m[n - 1, n - 3] = 1.5 / h, -2.0 / h, 0.5 / h
    return m.tocsr()


def _d2_matrix(n: int, h: float) -> sp.csr_matrix:
    m = sp.lil_matrix((n, n))
    c = 1.0 / h**2
    for k in range(1, n - 1):
        m[k, k - 1], m[k, k], m[k, k + 1] = c, -2.0 * c, c
    m[0, 0], m[0, 1], m[0, 2] = c, -2.0 * c, c
    m[n - 1, n - 3], m[n - 1, n - 2], m[n - 1, n - 1] = c, -2.0 * c, c
    return m.tocsr()


@dataclass(frozen=True)
class DiffOps:
    """Sparse matrix realisations of the stencils above, on the flat layout."""

    dx: sp.csr_matrix = field(compare=False)
    dy: sp.csr_matrix = field(compare=False)
    dxx: sp.csr_matrix = field(compare=False)
    dyy: sp.csr_matrix = field(compare=False)
    dxy: sp.csr_matrix = field(compare=False)


@lru_cache(maxsize=64)
def diff_ops(grid: Grid) -> DiffOps:
    d1x = _d1_matrix(grid.nx, grid.hx)
    d1y = _d1_matrix(grid.ny, grid.hy)
    d2x = _d2_matrix(grid.nx, grid.hx)
    d2y = _d2_matrix(grid.ny, grid.hy)
    ix = sp.identity(grid.nx, format="csr")
    iy = sp.identity(grid.ny, format="csr")

    def _canon(m):
        m = m.tocsr()
        m.sort_indices()
        return m

    return DiffOps(
        dx=_canon(sp.kron(iy, d1x)),
        dy=_canon(sp.kron(d1y, ix)),
        dxx=_canon(sp.kron(iy, d2x)),
        dyy=_canon(sp.kron(d2y, ix)),
        dxy=_canon(sp.kron(d1y, d1x)),
    )


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------

def _axis_trapezoid(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def area_weights(grid: Grid) -> np.ndarray:
    """Tensor trapezoid cell weights over all nodes; sums to the exact area."""
    wx = _axis_trapezoid(grid.nx, grid.hx)
    wy = _axis_trapezoid(grid.ny, grid.hy)
    return np.outer(wy, wx).ravel()


def boundary_measure(grid: Grid) -> MeasurementSet:
    """Arc-length (gamma = n-1) trapezoid weights on the four faces; corners
    carry (hx+hy)/2.  Total weight is exactly the perimeter."""
    i = np.arange(grid.n_nodes) % grid.nx
    j = np.arange(grid.n_nodes) // grid.nx
    nodes = grid.boundary_nodes
    ii, jj = i[nodes], j[nodes]
    on_x_face = (jj == 0) | (jj == grid.ny - 1)
    on_y_face = (ii == 0) | (ii == grid.nx - 1)
    w = np.where(on_x_face & on_y_face, 0.5 * (grid.hx + grid.hy),
                 np.where(on_x_face, grid.hx, grid.hy))
    return MeasurementSet(grid, nodes, w, gamma=1.0)


def interior_measure(grid: Grid, mask=None) -> MeasurementSet:
    """Area (gamma = n) weights, optionally restricted by a node predicate.

    ``mask`` may be None (all nodes), a boolean array over nodes, or a
    callable ``mask(x, y) -> bool array``.  An all-false mask yields the
    legal empty measurement set.
    """
    w = area_weights(grid)
    if mask is None:
        keep = np.ones(grid.n_nodes, dtype=bool)
    elif callable(mask):
        keep = np.asarray(mask(grid.x, grid.y), dtype=bool).ravel()
    else:
        keep = np.asarray(mask, dtype=bool).ravel()
    nodes = np.flatnonzero(keep)
    return MeasurementSet(grid, nodes, w[nodes], gamma=2.0)


def point_measure(grid: Grid, nodes: Sequence[int]) -> MeasurementSet:
    """Counting measure (gamma = 0): unit weight per listed node."""
    nodes = np.asarray(nodes, dtype=int)
    return MeasurementSet(grid, nodes, np.ones(nodes.size), gamma=0.0)


def line_measure(grid: Grid, j: int) -> MeasurementSet:
    """1-D trapezoid weights on the horizontal grid line of row index j."""
    if not 0 <= j < grid.ny:
        raise ValueError(f"row index {j} outside grid")
    nodes = j * grid.nx + np.arange(grid.nx)
    return MeasurementSet(grid, nodes, _axis_trapezoid(grid.nx, grid.hx),
                          gamma=1.0)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_csv(u: GridFunction, path) -> None:
    """Write ``x,y,value`` rows in row-major node order, 17 significant digits."""
    g = u.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "value"])
        for k in range(g.n_nodes):
            w.writerow([f"{g.x[k]:.17g}", f"{g.y[k]:.17g}",
                        f"{u.values[k]:.17g}"])


def read_csv(grid: Grid, path) -> GridFunction:
    """Read a grid function written by :func:`write_csv` (test utility)."""
    vals = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != ["x", "y", "value"]:
            raise ValueError(f"unexpected header {header!r}")
        for row in r:
            vals.append(float(row[2]))
    return GridFunction(grid, np.asarray(vals))
