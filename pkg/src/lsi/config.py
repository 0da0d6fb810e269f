"""Experiment configuration: a flat sectioned key-value text format parsed by
a small hand-rolled reader, with coefficient and data fields given in the
closed-form expression language of :mod:`lsi.expr`.

Example::

    [grid]
    nx = 33
    ny = 33
    rect = 0 1 0 1

    [operator]
    preset = laplace

    [problem]
    u0 = x*(1-x)*y*(1-y)*(1 + 0.5*sin(pi*x))
    g = 0
    K = identity
    gamma = disc 0.5 0.5 0.25

    [sweep]
    alpha = 1e-1 1e-2 1e-3
    delta = 0 1e-3 1e-2
    schedule = 2 4 8 16 32 64
    seed = 20240817
    tol = 1e-8
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import grids
from .elliptic import EllipticCoefficients
from .expr import compile_expression
from .grids import Grid, GridFunction, MeasurementSet, gradient, make_grid
from .observation import ObservationOperator, builtin


class ConfigError(ValueError):
    """Configuration problem; the message names the offending field."""


def read_sections(text: str) -> dict[str, dict[str, str]]:
    """Parse the sectioned key-value format ('#' starts a comment)."""
    sections: dict[str, dict[str, str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, value = (part.strip() for part in line.split("=", 1))
        sections[current][key] = value
    return sections


def config_hash(sections: dict[str, dict[str, str]]) -> str:
    """Hash of the canonicalised configuration; stable under reordering."""
    parts = []
    for sec in sorted(sections):
        for key in sorted(sections[sec]):
            value = " ".join(sections[sec][key].split())
            parts.append(f"{sec}.{key}={value}")
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()


def _floats(value: str) -> list[float]:
    return [float(tok) for tok in value.split()]


@dataclass
class ExperimentConfig:
    """Validated experiment frame built from a configuration file."""

    sections: dict
    grid: Grid
    coef: EllipticCoefficients
    u0: GridFunction
    g: GridFunction
    K: ObservationOperator
    gamma: MeasurementSet
    alphas: list[float]
    deltas: list[float]
    schedule: list[float]
    seed: int
    tol: float
    max_iter: int
    h_expr: str | None = None

    @property
    def hash(self) -> str:
        return config_hash(self.sections)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        sections = read_sections(text)

        def need(sec: str, key: str) -> str:
            try:
                return sections[sec][key]
            except KeyError:
                raise ConfigError(f"missing field {sec}.{key}") from None

        def get(sec: str, key: str, default: str) -> str:
            return sections.get(sec, {}).get(key, default)

        # grid
        try:
            nx = int(need("grid", "nx"))
            ny = int(need("grid", "ny"))
            rect = _floats(need("grid", "rect"))
            if len(rect) != 4:
                raise ConfigError("grid.rect needs four numbers: ax bx ay by")
            grid = make_grid(nx, ny, rect)
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from exc

        coef = build_coefficients(grid, sections.get("operator", {}))

        # fields
        def field_fn(sec: str, key: str) -> GridFunction:
            text_expr = need(sec, key)
            try:
                fn = compile_expression(text_expr)
            except ValueError as exc:
                raise ConfigError(f"{sec}.{key}: {exc}") from exc
            return GridFunction(grid, np.broadcast_to(
                np.asarray(fn(grid.x, grid.y), dtype=float),
                (grid.n_nodes,)).copy())

        u0 = field_fn("problem", "u0")
        g = field_fn("problem", "g")

        gamma = build_gamma(grid, need("problem", "gamma"))
        k_label = get("problem", "K", "identity")
        try:
            k_op = builtin(k_label, grid)
        except ValueError as exc:
            raise ConfigError(f"problem.K: {exc}") from exc
        if k_label == "normal_derivative" and gamma.gamma != 1.0:
            raise ConfigError(
                "problem.K: normal_derivative requires a boundary measurement set")

        # sweep
        alphas = _floats(get("sweep", "alpha", "1e-2"))
        deltas = _floats(get("sweep", "delta", "0"))
        schedule = _floats(get("sweep", "schedule", "2 4 8 16 32 64"))
        if not alphas:
            raise ConfigError("sweep.alpha: empty list")
        if not deltas:
            raise ConfigError("sweep.delta: empty list")
        if not schedule:
            raise ConfigError("sweep.schedule: empty list")
        for a in alphas:
            if a <= 0:
                raise ConfigError(f"sweep.alpha: must be > 0, got {a}")
        for d in deltas:
            if d < 0:
                raise ConfigError(f"sweep.delta: must be >= 0, got {d}")
        if any(q <= p for p, q in zip(schedule, schedule[1:])):
            raise ConfigError("sweep.schedule: must be strictly increasing")
        seed = int(get("sweep", "seed", "0"))
        tol = float(get("sweep", "tol", "1e-8"))
        if tol <= 0:
            raise ConfigError("sweep.tol: must be > 0")
        max_iter = int(get("sweep", "max_iter", "5000"))

        h_expr = sections.get("nonuniqueness", {}).get("h")

        return cls(sections=sections, grid=grid, coef=coef, u0=u0, g=g,
                   K=k_op, gamma=gamma, alphas=alphas, deltas=deltas,
                   schedule=schedule, seed=seed, tol=tol, max_iter=max_iter,
                   h_expr=h_expr)


def build_coefficients(grid: Grid, section: dict[str, str]) -> EllipticCoefficients:
    """Build operator coefficients from a preset or per-field expressions.

    ``form = divergence`` converts a divergence-form principal part with C^1
    matrix coefficient into the non-divergence fields by adding the discrete
    divergence of the matrix columns to the drift.
    """
    preset = section.get("preset")
    if preset == "laplace" or (preset is None and not section):
        return EllipticCoefficients.laplacian(grid)
    if preset is not None and preset != "laplace":
        raise ConfigError(f"operator.preset: unknown preset {preset!r}")

    def fld(key: str, default: str) -> GridFunction:
        text = section.get(key, default)
        try:
            fn = compile_expression(text)
        except ValueError as exc:
            raise ConfigError(f"operator.{key}: {exc}") from exc
        return GridFunction(grid, np.broadcast_to(
            np.asarray(fn(grid.x, grid.y), dtype=float), (grid.n_nodes,)).copy())

    a11 = fld("a11", "1")
    a12 = fld("a12", "0")
    a22 = fld("a22", "1")
    b1 = fld("b1", "0")
    b2 = fld("b2", "0")
    c = fld("c", "0")
    try:
        a0 = float(section.get("a0", "1"))
    except ValueError as exc:
        raise ConfigError(f"operator.a0: {exc}") from exc

    if section.get("form", "nondivergence") == "divergence":
        da11 = gradient(a11)
        da12 = gradient(a12)
        da22 = gradient(a22)
        b1 = GridFunction(grid, b1.values + da11.dx.values + da12.dy.values)
        b2 = GridFunction(grid, b2.values + da12.dx.values + da22.dy.values)

    try:
        return EllipticCoefficients(a11, a12, a22, b1, b2, c, a0=a0)
    except ValueError as exc:
        raise ConfigError(f"operator: {exc}") from exc


def build_gamma(grid: Grid, spec: str) -> MeasurementSet:
    """Measurement-set specs: ``boundary`` | ``disc cx cy r`` | ``line j`` |
    ``points i,j i,j ...``."""
    toks = spec.split()
    kind = toks[0] if toks else ""
    if kind == "boundary" and len(toks) == 1:
        return grids.boundary_measure(grid)
    if kind == "disc" and len(toks) == 4:
        cx, cy, r = (float(t) for t in toks[1:])
        return grids.interior_measure(
            grid, lambda x, y: (x - cx)**2 + (y - cy)**2 <= r * r)
    if kind == "line" and len(toks) == 2:
        return grids.line_measure(grid, int(toks[1]))
    if kind == "points" and len(toks) > 1:
        nodes = []
        for tok in toks[1:]:
            i, j = (int(t) for t in tok.split(","))
            nodes.append(grid.node_index(i, j))
        return grids.point_measure(grid, nodes)
    raise ConfigError(f"problem.gamma: cannot parse spec {spec!r}")
