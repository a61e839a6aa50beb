"""
Functional Solver
=================

Minimizes the empirical LipIRM loss over piecewise-linear functions on a
uniform grid of [0, 1]:

    L(f) = Σ_e w_e Σ_i (f(x_i) − y_i)²
         + Σ_e η_e [w_e Σ_i 2 f(x_i)(f(x_i) − y_i)]²
         + λ Σ_cells c_J (f'_J)²

with w_e = 1/N_e (``normalization="mean"``) or 1 (``"sum"``) and f'_J the
slope of cell J. The Lipschitz cell weight c_J is either the sample sum
Σ_e w_e Σ_i ρ(x_i) over the cells meeting at the node nearest x_i, each
sample split evenly between them (``"samples"``), or h·ρ_J
(``"importance"``, the quadrature of λ ∫ ρ f'² dx). Cells that no sample
reaches take weights interpolated from their neighbours, so λ acts on
every slope.

Freezing the IRM bracket m_e = w_e Σ 2 f(f − y) leaves a quadratic whose
normal equations are tridiagonal:

    [Σ_e w_e (1 + 4η_e m_e) PᵀP + λ DᵀCD] f = Σ_e w_e (1 + 2η_e m_e) Pᵀy

The outer loop solves them, then backtracks along the step until the true
loss does not increase, and recomputes the bracket.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .bvp import sample_rho
from .data import DomainDataset, Grouping
from .grid import Grid1D, GridFunction, cell_average
from .penalties import PenaltyScheme
from .schemas import SolverConfig

logger = logging.getLogger(__name__)


class SolverError(Exception):
    """Exception raised when the functional solver fails; carries the last iterate and loss trace."""

    def __init__(self, message: str, last_iterate: Optional[GridFunction] = None, loss_trace: Optional[List[float]] = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.loss_trace = list(loss_trace or [])


@dataclass
class _DomainTerms:
    domain_id: int
    cell: np.ndarray
    theta: np.ndarray
    y: np.ndarray
    weight: float
    eta: float
    rho: np.ndarray

    def evaluate(self, f: np.ndarray) -> np.ndarray:
        return (1.0 - self.theta) * f[self.cell] + self.theta * f[self.cell + 1]


@dataclass
class _Problem:
    grid: Grid1D
    terms: List[_DomainTerms]
    cell_weights: np.ndarray
    lam: float
    bracket: str

    def bracket_value(self, t: _DomainTerms, u: np.ndarray) -> float:
        if self.bracket == "label":
            return t.weight * float(np.sum(2.0 * t.y * (u - t.y)))
        return t.weight * float(np.sum(2.0 * u * (u - t.y)))

    def loss(self, f: np.ndarray) -> float:
        total = []
        for t in self.terms:
            u = t.evaluate(f)
            total.append(t.weight * float(np.sum((u - t.y) ** 2)))
            total.append(t.eta * self.bracket_value(t, u) ** 2)
        slopes = np.diff(f) / self.grid.h
        total.append(self.lam * float(np.sum(self.cell_weights * slopes**2)))
        return float(np.sum(total))


def _domain_weight(dataset: DomainDataset, normalization: str) -> float:
    return 1.0 / dataset.n if normalization == "mean" else 1.0


def _sample_cell_weights(grid: Grid1D, terms: Sequence[_DomainTerms]) -> np.ndarray:
    """
    Lipschitz weight per cell from the samples.

    Each sample contributes w_e ρ(x_i) to the mean squared slope of the
    cells meeting at its nearest node (one cell at the ends of [0, 1]).
    Cells that no sample reaches take weights linearly interpolated between
    the nearest reached cells, held constant beyond the outermost ones.
    """
    n_cells = grid.n_grid - 1
    weights = np.zeros(n_cells)
    for t in terms:
        node = t.cell + (t.theta >= 0.5)
        mass = t.weight * t.rho
        interior = (node > 0) & (node < n_cells)
        weights += np.bincount(node[interior] - 1, weights=0.5 * mass[interior], minlength=n_cells)
        weights += np.bincount(node[interior], weights=0.5 * mass[interior], minlength=n_cells)
        weights[0] += float(np.sum(mass[node == 0]))
        weights[-1] += float(np.sum(mass[node == n_cells]))
    reached = weights > 0
    if not np.any(reached) or np.all(reached):
        return weights
    mids = grid.midpoints
    return np.interp(mids, mids[reached], weights[reached])


def _build_problem(
    data: Sequence[DomainDataset],
    scheme: PenaltyScheme,
    config: SolverConfig,
    grouping: Optional[Grouping] = None,
) -> _Problem:
    if not data:
        raise SolverError("empty domain: no domains were supplied")
    grid = Grid1D(config.n_grid)
    terms = []
    for dataset in data:
        if dataset.n < 1:
            raise SolverError(f"empty domain: domain {dataset.domain_id} has no samples")
        try:
            cell, theta = grid.locate(dataset.x[:, 0])
        except ValueError as e:
            raise SolverError(f"Domain {dataset.domain_id}: {str(e)}") from e
        terms.append(
            _DomainTerms(
                domain_id=dataset.domain_id,
                cell=cell,
                theta=theta,
                y=dataset.y,
                weight=_domain_weight(dataset, config.normalization),
                eta=scheme.eta_of(dataset.domain_id),
                rho=sample_rho(dataset, scheme, grouping),
            )
        )
    if config.lipschitz_weighting == "importance":
        xs = np.concatenate([d.x[:, 0] for d in data])
        rhos = np.concatenate([t.rho for t in terms])
        cell_weights = grid.h * cell_average(grid, xs, rhos)
    else:
        cell_weights = _sample_cell_weights(grid, terms)
    return _Problem(grid=grid, terms=terms, cell_weights=cell_weights, lam=scheme.lambda_, bracket=config.bracket)


def empirical_loss(
    f: GridFunction,
    data: Sequence[DomainDataset],
    scheme: PenaltyScheme,
    config: Optional[SolverConfig] = None,
    grouping: Optional[Grouping] = None,
) -> float:
    """
    Empirical LipIRM loss of a grid function.

    Parameters
    ----------
    f : GridFunction
        Candidate estimator; its grid overrides ``config.n_grid``.
    data : sequence of DomainDataset
        1-D training domains (features in [0, 1]).
    scheme : PenaltyScheme
        λ, η_e and ρ_k.
    config : SolverConfig, optional
        Normalization, bracket and Lipschitz weighting flags.

    Raises
    ------
    SolverError
        If a feature lies outside [0, 1] or a domain is empty.

    Examples
    --------
    Two samples y = 0 and y = 2 with f ≡ 1 give ERM 1 and a zero IRM bracket:

    >>> data = [DomainDataset(0, np.array([0.0, 1.0]), np.array([0.0, 2.0]))]
    >>> f = GridFunction(Grid1D(3), np.ones(3))
    >>> empirical_loss(f, data, PenaltyScheme(lambda_=1.0, eta={0: 1.0}))
    1.0
    """
    config = (config or SolverConfig()).model_copy(update={"n_grid": f.grid.n_grid})
    return _build_problem(data, scheme, config, grouping).loss(f.values)


def _gram_bands(problem: _Problem, coefficients: Sequence[float]) -> np.ndarray:
    """Banded Σ_e w_e a_e PᵀP + λ DᵀCD."""
    n = problem.grid.n_grid
    bands = np.zeros((3, n))
    for t, a in zip(problem.terms, coefficients):
        scale = t.weight * a
        left = 1.0 - t.theta
        bands[1] += scale * np.bincount(t.cell, weights=left**2, minlength=n)
        bands[1] += scale * np.bincount(t.cell + 1, weights=t.theta**2, minlength=n)
        cross = scale * np.bincount(t.cell, weights=left * t.theta, minlength=n - 1)
        bands[0, 1:] += cross
        bands[2, :-1] += cross
    lip = problem.lam * problem.cell_weights / problem.grid.h**2
    bands[1, :-1] += lip
    bands[1, 1:] += lip
    bands[0, 1:] -= lip
    bands[2, :-1] -= lip
    return bands


def _rhs(problem: _Problem, coefficients: Sequence[float]) -> np.ndarray:
    n = problem.grid.n_grid
    out = np.zeros(n)
    for t, b in zip(problem.terms, coefficients):
        scale = t.weight * b
        out += scale * np.bincount(t.cell, weights=(1.0 - t.theta) * t.y, minlength=n)
        out += scale * np.bincount(t.cell + 1, weights=t.theta * t.y, minlength=n)
    return out


def _fixed_point_step(problem: _Problem, f: np.ndarray, config: SolverConfig) -> np.ndarray:
    """Solve the normal equations with every IRM bracket frozen at ``f``."""
    a_coef, b_coef = [], []
    for t in problem.terms:
        m = problem.bracket_value(t, t.evaluate(f))
        if problem.bracket == "label":
            a, b = 1.0, 1.0 - 2.0 * t.eta * m
        else:
            a, b = 1.0 + 4.0 * t.eta * m, 1.0 + 2.0 * t.eta * m
        if a < config.convexity_floor:
            logger.warning(f"Domain {t.domain_id}: frozen IRM curvature {a:.3g} clipped to {config.convexity_floor:g}")
            a = config.convexity_floor
        a_coef.append(a)
        b_coef.append(b)
    bands = _gram_bands(problem, a_coef)
    if config.ridge > 0:
        # smoothness ridge: leaves only constants for the data to fix
        ridge = config.ridge * max(float(np.max(bands[1])), 1.0)
        bands[1, :-1] += ridge
        bands[1, 1:] += ridge
        bands[0, 1:] -= ridge
        bands[2, :-1] -= ridge
    try:
        return linalg.solve_banded((1, 1), bands, _rhs(problem, b_coef))
    except (linalg.LinAlgError, ValueError) as e:
        raise SolverError(f"normal equations are singular: {str(e)}") from e


def _initial_values(data: Sequence[DomainDataset], grid: Grid1D, init: str) -> np.ndarray:
    if init == "zeros":
        return np.zeros(grid.n_grid)
    pooled = np.concatenate([d.y for d in data])
    return np.full(grid.n_grid, float(np.mean(pooled)))


def minimize_with_trace(
    data: Sequence[DomainDataset],
    scheme: PenaltyScheme,
    config: Optional[SolverConfig] = None,
    grouping: Optional[Grouping] = None,
) -> Tuple[GridFunction, List[float]]:
    """
    Minimize the empirical loss and return the estimator with its loss trace.

    The trace holds the loss of the initial function followed by one entry
    per outer iteration and is nonincreasing.

    Raises
    ------
    SolverError
        If the relative loss change is still above ``config.tolerance``
        after ``config.max_outer_iters`` iterations, or if every halving of
        a step away from a non-stationary iterate increases the loss;
        ``last_iterate`` and ``loss_trace`` are attached.
    """
    config = config or SolverConfig()
    problem = _build_problem(data, scheme, config, grouping)
    f = _initial_values(data, problem.grid, config.init)
    loss = problem.loss(f)
    trace = [loss]
    for iteration in range(config.max_outer_iters):
        target = _fixed_point_step(problem, f, config)
        step = config.step_size
        candidate, candidate_loss = None, loss
        for _ in range(config.max_inner_iters):
            trial = f + step * (target - f)
            trial_loss = problem.loss(trial)
            if trial_loss <= loss:
                candidate, candidate_loss = trial, trial_loss
                break
            step *= 0.5
        if candidate is None:
            # rejected steps from a fixed point of the frozen-bracket map
            if np.max(np.abs(target - f)) <= np.sqrt(config.tolerance) * (1.0 + np.max(np.abs(f))):
                logger.info(f"Functional solver reached a fixed point after {iteration + 1} iterations (loss {loss:.6g})")
                return GridFunction(problem.grid, f), trace
            raise SolverError(
                f"line search found no descent step in {config.max_inner_iters} halvings "
                f"at outer iteration {iteration + 1}",
                last_iterate=GridFunction(problem.grid, f),
                loss_trace=trace,
            )
        change = abs(loss - candidate_loss) / max(abs(loss), np.finfo(float).tiny)
        f, loss = candidate, candidate_loss
        trace.append(loss)
        logger.debug(f"Outer iteration {iteration + 1}: loss={loss:.10g}, step={step:.3g}, change={change:.3g}")
        if change < config.tolerance:
            logger.info(f"Functional solver converged after {iteration + 1} iterations (loss {loss:.6g})")
            return GridFunction(problem.grid, f), trace
    raise SolverError(
        f"Functional solver did not converge in {config.max_outer_iters} iterations "
        f"(last relative change {change:.3g})",
        last_iterate=GridFunction(problem.grid, f),
        loss_trace=trace,
    )


def minimize(
    data: Sequence[DomainDataset],
    scheme: PenaltyScheme,
    config: Optional[SolverConfig] = None,
    grouping: Optional[Grouping] = None,
) -> GridFunction:
    """
    Estimator minimizing the empirical LipIRM loss over grid functions.

    Parameters
    ----------
    data : sequence of DomainDataset
        Non-empty 1-D domains with features in [0, 1].
    scheme : PenaltyScheme
        λ, η_e per domain and ρ_k per group.
    config : SolverConfig, optional
        Grid size, iteration limits and formulation flags.
    grouping : Grouping, optional
        Maps samples to the groups indexing ``scheme.rho``; without it the
        datasets' ``group_ids`` are used, and group 0 when those are absent.

    Returns
    -------
    GridFunction
    """
    f, _ = minimize_with_trace(data, scheme, config, grouping)
    return f
