"""Brute-force validators: trapezoid quadrature, central differences, simplex grid search.

These operate on plain callables and never route through the kernel or flow
code they are used to check.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from klflow.errors import InputError, NumericalError, ScaleError


@dataclass(frozen=True)
class QuadratureGrid:
    lo: float
    hi: float
    nodes: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InputError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if self.nodes < 2:
            raise InputError("a quadrature grid needs at least two nodes")

    @property
    def points(self):
        return np.linspace(self.lo, self.hi, self.nodes)

    @property
    def weights(self):
        h = (self.hi - self.lo) / (self.nodes - 1)
        w = np.full(self.nodes, h)
        w[0] = w[-1] = h / 2
        return w


def quad_integral(f, g: QuadratureGrid, vectorized=False) -> float:
    """Trapezoid rule for ``f`` on ``g``.

    ``f`` is called once per node, or once on the whole node array when
    ``vectorized`` is set.
    """
    if vectorized:
        vals = np.asarray(f(g.points), dtype=float).reshape(-1)
    else:
        vals = np.array([float(f(x)) for x in g.points])
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise NumericalError("integrand is not finite", int(bad[0]))
    return float(vals @ g.weights)


def finite_diff_grad(f, x, h=1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at ``x``."""
    if not h > 0:
        raise InputError("step h must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def simplex_grid(m, resolution):
    """All points of the simplex in ``R^m`` with coordinates on a ``resolution`` lattice."""
    if m > 4:
        raise ScaleError(f"simplex grid search is limited to m <= 4, got {m}")
    if m < 1:
        raise InputError("m must be at least 1")
    steps = int(round(1.0 / resolution))
    if steps < 1:
        raise InputError("resolution must be at most 1")
    if m == 1:
        return np.ones((1, 1))
    heads = np.array([c for c in product(range(steps + 1), repeat=m - 1) if sum(c) <= steps])
    pts = np.column_stack([heads, steps - heads.sum(axis=1)])
    return pts / steps


def simplex_grid_argmin(objective, m, resolution, vectorized=False) -> np.ndarray:
    """Grid point of the simplex with the smallest ``objective`` value.

    ``objective`` receives one weight vector at a time, or the whole
    ``(points, m)`` grid when ``vectorized`` is set.
    """
    pts = simplex_grid(m, resolution)
    if vectorized:
        vals = np.asarray(objective(pts), dtype=float)
    else:
        vals = np.array([objective(p) for p in pts])
    return pts[int(np.argmin(vals))]
