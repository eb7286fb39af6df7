"""Uniform midpoint quadrature on the unit cube and tabulated functions on it."""

from dataclasses import dataclass, field
from functools import cached_property
import itertools

import numpy as np


class GridMismatchError(ValueError):
    """Raised when two grid functions live on different grids."""


@dataclass(frozen=True)
class Grid:
    """Midpoint lattice over [0, 1]^d with ``points_per_axis`` nodes per axis.

    Nodes sit at ``(i + 0.5) / points_per_axis``; every node carries the same
    quadrature weight ``points_per_axis ** -d``.
    """

    d: int
    points_per_axis: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d!r}")
        if int(self.points_per_axis) != self.points_per_axis or self.points_per_axis < 2:
            raise ValueError(
                f"points_per_axis must be an integer >= 2, got {self.points_per_axis!r}"
            )

    @cached_property
    def axis(self):
        p = self.points_per_axis
        return (np.arange(p, dtype=np.float64) + 0.5) / p

    @cached_property
    def nodes(self):
        """Array of shape (size, d), last axis varying fastest."""
        if self.d == 1:
            out = self.axis[:, None].copy()
        else:
            out = np.array(list(itertools.product(self.axis, repeat=self.d)), dtype=np.float64)
        out.setflags(write=False)
        return np.ascontiguousarray(out)

    @property
    def size(self):
        return self.points_per_axis ** self.d

    @property
    def cell_weight(self):
        return float(self.points_per_axis) ** (-self.d)

    def tabulate(self, func):
        """Tabulate a vectorised ``func(nodes) -> values`` on the grid."""
        return GridFunction(self, func(self.nodes))

    def zeros(self):
        return GridFunction(self, np.zeros(self.size))

    def constant(self, value):
        return GridFunction(self, np.full(self.size, float(value)))


def make_grid(d, points_per_axis):
    return Grid(d, points_per_axis)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values of a real function at every node of ``grid``."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).reshape(-1)
        if vals.shape[0] != self.grid.size:
            raise ValueError(
                f"expected {self.grid.size} values for {self.grid}, got {vals.shape[0]}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def _check(self, other):
        if not isinstance(other, GridFunction):
            return NotImplemented
        if other.grid != self.grid:
            raise GridMismatchError(f"{self.grid} vs {other.grid}")
        return other

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values + other.values)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values - other.values)
        return NotImplemented

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return GridFunction(self.grid, float(scalar) * self.values)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)


def inner_product(a, b):
    """Quadrature approximation of the L2 inner product on [0, 1]^d."""
    if a.grid != b.grid:
        raise GridMismatchError(f"{a.grid} vs {b.grid}")
    return a.grid.cell_weight * float(np.dot(a.values, b.values))


def norm_sq(a):
    return inner_product(a, a)


def normalized_error(f_n, f):
    """``||f_n - f||^2 / ||f||^2``."""
    denom = norm_sq(f)
    if not denom > 0.0:
        raise ValueError("target has zero norm; normalized error is undefined")
    return norm_sq(f_n - f) / denom


def target_value(x):
    """The three-bump benchmark target on [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    return (
        0.2 * np.exp(-((10.0 * x - 4.0) ** 2))
        + 0.5 * np.exp(-((80.0 * x - 40.0) ** 2))
        + 0.3 * np.exp(-((80.0 * x - 20.0) ** 2))
    )


def target_function(grid):
    if grid.d != 1:
        raise ValueError(f"the benchmark target is one-dimensional, grid has d={grid.d}")
    return GridFunction(grid, target_value(grid.nodes[:, 0]))
