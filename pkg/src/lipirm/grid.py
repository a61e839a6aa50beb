"""
Grid Functions
==============

Uniform discretization of the unit interval and piecewise-linear functions
on it. All integrals in the theory engine and the functional solver use the
composite trapezoid rule on these nodes, and sample sets are mapped onto
nodes with linear hat functions (:func:`deposit`), so a quadrature of a
deposited table against a grid function reproduces the per-sample sum of its
linear interpolant exactly.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np
from scipy import sparse
from scipy.integrate import cumulative_trapezoid


class GridError(ValueError):
    """Exception raised for invalid grids, grid functions or off-grid samples."""

    pass


@dataclass(frozen=True)
class Grid1D:
    """
    ``n_grid`` equally spaced nodes on [0, 1], endpoints included.

    Examples
    --------
    >>> grid = Grid1D(5)
    >>> grid.h
    0.25
    >>> grid.weights.tolist()
    [0.125, 0.25, 0.25, 0.25, 0.125]
    """

    n_grid: int

    def __post_init__(self):
        if self.n_grid < 3:
            raise GridError(f"n_grid must be >= 3, got {self.n_grid}")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_grid)

    @property
    def h(self) -> float:
        return 1.0 / (self.n_grid - 1)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights (h/2 at both ends, h inside)."""
        w = np.full(self.n_grid, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    @property
    def midpoints(self) -> np.ndarray:
        x = self.points
        return 0.5 * (x[:-1] + x[1:])

    def integrate(self, values: np.ndarray) -> float:
        """Composite trapezoid integral of a node table."""
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.n_grid:
            raise GridError(f"Expected {self.n_grid} node values, got {values.shape[-1]}")
        # np.sum reduces pairwise, so the result does not depend on evaluation order
        return float(np.sum(self.weights * values, axis=-1))

    def cumulative(self, values: np.ndarray) -> np.ndarray:
        """Running trapezoid integral ∫_0^{x_j}, starting at 0."""
        return cumulative_trapezoid(np.asarray(values, dtype=float), dx=self.h, initial=0.0)

    def tabulate(self, func) -> np.ndarray:
        """Evaluate a vectorized callable on the nodes."""
        return np.asarray(func(self.points), dtype=float) * np.ones(self.n_grid)

    def locate(self, x: np.ndarray) -> tuple:
        """
        Cell index and local coordinate of each sample.

        Returns
        -------
        tuple of numpy.ndarray
            ``(cell, theta)`` with ``x = (cell + theta) h`` and
            ``0 <= theta <= 1``; the right end point maps to the last cell.

        Raises
        ------
        GridError
            If a sample lies outside [0, 1].
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size and (np.min(x) < 0.0 or np.max(x) > 1.0 or not np.all(np.isfinite(x))):
            raise GridError("sample features must lie in [0, 1]")
        scaled = x / self.h
        cell = np.minimum(np.floor(scaled).astype(int), self.n_grid - 2)
        return cell, scaled - cell

    def interpolation_matrix(self, x: np.ndarray) -> sparse.csr_matrix:
        """Sparse ``(len(x), n_grid)`` matrix evaluating piecewise-linear functions at ``x``."""
        cell, theta = self.locate(x)
        rows = np.repeat(np.arange(cell.size), 2)
        cols = np.column_stack([cell, cell + 1]).reshape(-1)
        vals = np.column_stack([1.0 - theta, theta]).reshape(-1)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(cell.size, self.n_grid))

    def deposit(self, x: np.ndarray, values: Union[float, np.ndarray] = 1.0, scale: float = 1.0) -> np.ndarray:
        """
        Spread per-sample values onto nodes with hat functions, as a density.

        Node ``j`` receives ``scale * Σ_i φ_j(x_i) v_i / w_j`` where ``w_j`` is
        its quadrature weight, so ``integrate(deposit(x, v) * g)`` equals
        ``scale * Σ_i v_i g(x_i)`` for every piecewise-linear ``g``.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        values = np.broadcast_to(np.asarray(values, dtype=float), x.shape)
        mass = self.interpolation_matrix(x).T @ values
        return scale * np.asarray(mass).reshape(-1) / self.weights


@dataclass
class GridFunction:
    """
    Piecewise-linear function given by its node values.

    Examples
    --------
    >>> f = GridFunction(Grid1D(3), np.array([0.0, 1.0, 0.0]))
    >>> float(f(np.array([0.25]))[0])
    0.5
    """

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.shape[0] != self.grid.n_grid:
            raise GridError(f"Expected {self.grid.n_grid} node values, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise GridError("Grid function values must be finite")
        self.values = values

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.grid.points, self.values)

    def slopes(self) -> np.ndarray:
        """Exact derivative on each cell (length ``n_grid - 1``)."""
        return np.diff(self.values) / self.grid.h

    def derivative(self) -> np.ndarray:
        """Node derivative by second-order finite differences."""
        return np.gradient(self.values, self.grid.h, edge_order=2)

    def to_csv(self, path: Union[str, Path], column: str = "f") -> Path:
        return write_node_table(path, self.grid, {column: self.values})


def write_node_table(path: Union[str, Path], grid: Grid1D, columns: dict) -> Path:
    """Write node tables as CSV with an ``x`` column followed by ``columns``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    tables = [np.asarray(columns[name], dtype=float).reshape(-1) for name in names]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x"] + names)
        for j, x in enumerate(grid.points):
            writer.writerow([repr(float(x))] + [repr(float(t[j])) for t in tables])
    return path


def finite_difference_second(values: np.ndarray, h: float) -> np.ndarray:
    """
    Second derivative of a node table by five-point central differences.

    The two nodes next to each end use one-sided second-order stencils.
    """
    f = np.asarray(values, dtype=float)
    n = f.size
    if n < 6:
        raise GridError("five-point differences need at least 6 nodes")
    out = np.empty(n)
    out[2:-2] = (-f[4:] + 16 * f[3:-1] - 30 * f[2:-2] + 16 * f[1:-3] - f[:-4]) / (12 * h * h)
    for j in (0, 1):
        out[j] = (2 * f[j] - 5 * f[j + 1] + 4 * f[j + 2] - f[j + 3]) / (h * h)
    for j in (n - 2, n - 1):
        out[j] = (2 * f[j] - 5 * f[j - 1] + 4 * f[j - 2] - f[j - 3]) / (h * h)
    return out


def node_groups_from_edges(grid: Grid1D, edges: Iterable[float]) -> np.ndarray:
    """Group index per node for intervals ``[e_0, e_1), [e_1, e_2), ...`` covering [0, 1]."""
    edges = np.asarray(list(edges), dtype=float)
    groups = np.searchsorted(edges, grid.points, side="right") - 1
    return np.clip(groups, 0, edges.size - 2)


def cell_average(grid: Grid1D, x: np.ndarray, values: np.ndarray) -> np.ndarray:
    """
    Mean of per-sample ``values`` over each cell (length ``n_grid - 1``).

    Cells without samples take the linear interpolation of the covered
    cells' means (constant extrapolation at the ends).
    """
    cell, _ = grid.locate(x)
    values = np.asarray(values, dtype=float).reshape(-1)
    counts = np.bincount(cell, minlength=grid.n_grid - 1)
    sums = np.bincount(cell, weights=values, minlength=grid.n_grid - 1)
    covered = counts > 0
    if not np.any(covered):
        raise GridError("cell_average needs at least one sample")
    mids = grid.midpoints
    return np.interp(mids, mids[covered], sums[covered] / counts[covered])
