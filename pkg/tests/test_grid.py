"""
Tests for the grid module.
"""

import csv

import numpy as np
import pytest

from lipirm.grid import (
    Grid1D,
    GridError,
    GridFunction,
    cell_average,
    finite_difference_second,
    node_groups_from_edges,
    write_node_table,
)


class TestGrid1D:
    """Test nodes, quadrature and sample deposition."""

    def test_too_few_nodes(self):
        """Test that at least three nodes are required."""
        with pytest.raises(GridError, match="n_grid must be >= 3"):
            Grid1D(2)

    def test_weights(self):
        """Test the trapezoid weights."""
        grid = Grid1D(5)
        assert grid.h == 0.25
        assert grid.weights.tolist() == [0.125, 0.25, 0.25, 0.25, 0.125]

    def test_integrate_linear_exactly(self, grid):
        """Test that the trapezoid rule is exact on linear functions."""
        assert grid.integrate(grid.tabulate(lambda x: 3 * x + 1)) == pytest.approx(2.5)

    def test_integrate_shape_mismatch(self, grid):
        """Test that a table of the wrong length is rejected."""
        with pytest.raises(GridError, match="Expected 65 node values"):
            grid.integrate(np.ones(10))

    def test_tabulate_constant(self, grid):
        """Test that a scalar-valued callable broadcasts to every node."""
        assert grid.tabulate(lambda x: 2.0).shape == (65,)

    def test_cumulative(self, grid):
        """Test the running integral of 1."""
        np.testing.assert_allclose(grid.cumulative(np.ones(65)), grid.points)

    def test_locate_right_end(self):
        """Test that x = 1 maps to the last cell."""
        cell, theta = Grid1D(5).locate(np.array([0.0, 0.3, 1.0]))
        assert cell.tolist() == [0, 1, 3]
        np.testing.assert_allclose(theta, [0.0, 0.2, 1.0])

    def test_locate_outside(self, grid):
        """Test that samples outside [0, 1] are rejected."""
        with pytest.raises(GridError, match="must lie in"):
            grid.locate(np.array([0.5, 1.2]))

    def test_deposit_reproduces_sample_sums(self, grid):
        """Test ∫ deposit(x, v) g = Σ v_i g(x_i) for piecewise-linear g."""
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, 50)
        v = rng.normal(size=50)
        g = GridFunction(grid, rng.normal(size=grid.n_grid))
        density = grid.deposit(x, v, scale=0.5)
        assert grid.integrate(density * g.values) == pytest.approx(0.5 * np.sum(v * g(x)))

    def test_deposit_total_mass(self, grid):
        """Test that deposited unit values integrate to the sample count."""
        x = np.linspace(0, 1, 17)
        assert grid.integrate(grid.deposit(x)) == pytest.approx(17.0)


class TestGridFunction:
    """Test piecewise-linear grid functions."""

    def test_interpolation(self):
        """Test evaluation between nodes."""
        f = GridFunction(Grid1D(3), np.array([0.0, 1.0, 0.0]))
        np.testing.assert_allclose(f(np.array([0.25, 0.5, 0.75])), [0.5, 1.0, 0.5])

    def test_wrong_length(self):
        """Test that values must match the node count."""
        with pytest.raises(GridError, match="Expected 3 node values"):
            GridFunction(Grid1D(3), np.zeros(4))

    def test_non_finite(self):
        """Test that non-finite values are rejected."""
        with pytest.raises(GridError, match="finite"):
            GridFunction(Grid1D(3), np.array([0.0, np.nan, 1.0]))

    def test_slopes_and_derivative(self, grid):
        """Test exact slopes and node derivatives of a quadratic."""
        f = GridFunction(grid, grid.points**2)
        np.testing.assert_allclose(f.slopes(), 2 * grid.midpoints)
        np.testing.assert_allclose(f.derivative(), 2 * grid.points, atol=1e-12)

    def test_to_csv(self, tmp_path):
        """Test the node table layout."""
        f = GridFunction(Grid1D(3), np.array([1.0, 2.0, 3.0]))
        path = f.to_csv(tmp_path / "nested" / "f.csv", column="value")
        with open(path) as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["x", "value"]
        assert [float(v) for v in rows[2]] == [0.5, 2.0]


class TestHelpers:
    """Test finite differences, node groups and cell averages."""

    def test_second_difference_of_cubic(self, grid):
        """Test that the stencils are exact on cubics."""
        values = grid.points**3 - grid.points**2
        np.testing.assert_allclose(finite_difference_second(values, grid.h), 6 * grid.points - 2, atol=1e-8)

    def test_second_difference_needs_six_nodes(self):
        """Test the minimum stencil size."""
        with pytest.raises(GridError, match="at least 6 nodes"):
            finite_difference_second(np.zeros(5), 0.25)

    def test_node_groups_from_edges(self):
        """Test interval membership, with x = 1 in the last group."""
        groups = node_groups_from_edges(Grid1D(5), [0.0, 0.5, 1.0])
        assert groups.tolist() == [0, 0, 1, 1, 1]

    def test_cell_average_fills_gaps(self):
        """Test per-cell means with interpolation over empty cells."""
        grid = Grid1D(5)
        averages = cell_average(grid, np.array([0.1, 0.1, 0.9]), np.array([1.0, 3.0, 6.0]))
        np.testing.assert_allclose(averages, [2.0, 10.0 / 3.0, 14.0 / 3.0, 6.0])

    def test_cell_average_needs_samples(self):
        """Test that at least one sample is required."""
        with pytest.raises(GridError, match="at least one sample"):
            cell_average(Grid1D(5), np.array([]), np.array([]))

    def test_write_node_table_columns(self, tmp_path):
        """Test several columns in one table."""
        grid = Grid1D(3)
        path = write_node_table(tmp_path / "t.csv", grid, {"a": np.zeros(3), "b": np.ones(3)})
        with open(path) as handle:
            header = handle.readline().strip()
        assert header == "x,a,b"
