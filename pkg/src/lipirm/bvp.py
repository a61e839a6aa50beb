"""
Boundary Value Problem
======================

In one dimension the LipIRM estimator solves the Neumann problem

    −λ (ρ f')' + r f = H,    f'(0) = f'(1) = 0,

so it can be written through the Green's function G of the operator
(ρ G')' − (r/λ) G = δ(x − t). This module builds G in two ways, a
leading-order WKB formula and a flux-form finite-difference inverse, and
uses it for the asymptotic estimator and for residual checks of
solver output.

Discretization
--------------
Node j carries the trapezoid weight w_j. The operator is discretized in
flux form with face values ρ_{j+1/2} = (ρ_j + ρ_{j+1})/2 and mirror ghost
nodes at both ends, and the discrete delta at node j is 1/w_j there
(1/h inside, 2/h at the end nodes). With this choice diag(w)·A is
symmetric, hence so is the discrete G.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .config import get_config
from .data import DomainDataset, Grouping
from .grid import Grid1D, GridFunction, cell_average, write_node_table
from .penalties import PenaltyScheme
from .theory import TheoryError, TheorySetting, compute_ae

logger = logging.getLogger(__name__)

METHODS = ("wkb", "discrete")


def _check_positive(r: np.ndarray, rho: np.ndarray, lam: float) -> None:
    if not lam > 0:
        raise TheoryError(f"lambda must be positive, got {lam}")
    if np.any(r <= 0) or np.any(rho <= 0):
        raise TheoryError("r and rho must be positive on every node")


def _phase(lam: float, r: np.ndarray, rho: np.ndarray, grid: Grid1D) -> np.ndarray:
    """s(x) = λ^{-1/2} ∫_0^x √(r/ρ) dt."""
    return grid.cumulative(np.sqrt(r / rho)) / np.sqrt(lam)


def wkb_homogeneous(
    lam: float, r: np.ndarray, rho: np.ndarray, grid: Grid1D, log_bound: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Leading-order homogeneous solutions exp(∓ s(x)).

    Returns
    -------
    tuple of numpy.ndarray
        ``(f1, f2)``: the decaying and the growing solution, both 1 at x = 0.

    Raises
    ------
    TheoryError
        If the phase at x = 1 exceeds ``log_bound`` (config default 700),
        beyond which the growing solution overflows.

    Examples
    --------
    >>> grid = Grid1D(5)
    >>> f1, f2 = wkb_homogeneous(0.04, np.ones(5), np.ones(5), grid)
    >>> round(float(f2[-1]), 3)
    148.413
    """
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    _check_positive(r, rho, lam)
    log_bound = get_config().wkb_log_bound if log_bound is None else log_bound
    s = _phase(lam, r, rho, grid)
    if s[-1] > log_bound:
        raise TheoryError(f"WKB phase {s[-1]:.1f} exceeds the log bound {log_bound:g}; increase lambda")
    return np.exp(-s), np.exp(s)


def _face_rho(rho: np.ndarray) -> np.ndarray:
    return 0.5 * (rho[:-1] + rho[1:])


def _diffusion_bands(rho: np.ndarray, h: float) -> np.ndarray:
    """
    Banded (1, 1) form of the discrete (ρ f')' with mirror ghost nodes.

    Row 0 reads 2ρ_{1/2}(f_1 − f_0)/h², the last row mirrors it.
    """
    n = rho.size
    face = _face_rho(rho) / h**2
    upper = np.zeros(n)
    lower = np.zeros(n)
    diag = np.zeros(n)
    upper[1:] = face
    lower[:-1] = face
    diag[:-1] -= face
    diag[1:] -= face
    upper[1] *= 2.0
    lower[-2] *= 2.0
    diag[0] *= 2.0
    diag[-1] *= 2.0
    return np.vstack([upper, diag, lower])


def _apply_bands(bands: np.ndarray, f: np.ndarray) -> np.ndarray:
    out = bands[1] * f
    out[:-1] += bands[0, 1:] * f[1:]
    out[1:] += bands[2, :-1] * f[:-1]
    return out


def green_operator_bands(lam: float, r: np.ndarray, rho: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Banded form of (ρ G')' − (r/λ) G."""
    bands = _diffusion_bands(np.asarray(rho, dtype=float), grid.h)
    bands[1] -= np.asarray(r, dtype=float) / lam
    return bands


@dataclass
class GreensFunction:
    """Green's function table ``G[i, j] = G(x_i, t_j)``."""

    grid: Grid1D
    table: np.ndarray
    lam: float
    r: np.ndarray
    rho: np.ndarray
    method: str

    def apply(self, values: np.ndarray) -> np.ndarray:
        """∫ G(x, t) v(t) dt on the nodes."""
        return self.table @ (self.grid.weights * np.asarray(values, dtype=float))

    def to_csv(self, path: Union[str, Path], columns: Sequence[int] = ()) -> Path:
        """Write the slices G(·, t_j) for the requested node indices."""
        columns = list(columns) or [self.grid.n_grid // 2]
        return write_node_table(path, self.grid, {f"G_t{j}": self.table[:, j] for j in columns})


def _wkb_table(lam: float, r: np.ndarray, rho: np.ndarray, grid: Grid1D) -> np.ndarray:
    s = _phase(lam, r, rho, grid)
    total = s[-1]
    lo = np.minimum.outer(s, s)
    hi = np.maximum.outer(s, s)
    # every exponent below is <= 0
    bracket = (
        np.exp(lo + hi - 2 * total) + np.exp(lo - hi) + np.exp(-lo + hi - 2 * total) + np.exp(-lo - hi)
    )
    scale = -np.sqrt(lam) / (2.0 * np.sqrt(r * rho) * -np.expm1(-2.0 * total))
    return bracket * scale[np.newaxis, :]


def greens_function(
    lam: float, r: np.ndarray, rho: np.ndarray, grid: Grid1D, method: str = "discrete"
) -> GreensFunction:
    """
    Green's function of (ρ G')' − (r/λ) G = δ(x − t) with Neumann conditions.

    Parameters
    ----------
    lam : float
        Lipschitz scale λ > 0.
    r, rho : numpy.ndarray
        Total density and Lipschitz weight on the nodes.
    grid : Grid1D
        Node grid.
    method : str
        ``"wkb"`` for the leading-order formula

            G(x, t) = −√λ cosh(s_<) cosh(S − s_>) / (√(r ρ)(t) sinh S)

        (s the WKB phase, S = s(1)), written with decaying exponentials
        only; ``"discrete"`` for the inverse of the flux-form operator.

    Raises
    ------
    TheoryError
        For an unknown method, non-positive inputs, or a singular system.
    """
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    _check_positive(r, rho, lam)
    if method not in METHODS:
        raise TheoryError(f"Unknown Green's function method '{method}'; expected one of {METHODS}")
    if method == "wkb":
        table = _wkb_table(lam, r, rho, grid)
    else:
        bands = green_operator_bands(lam, r, rho, grid)
        try:
            table = linalg.solve_banded((1, 1), bands, np.diag(1.0 / grid.weights))
        except (linalg.LinAlgError, ValueError) as e:
            raise TheoryError(f"Green's function system is singular: {str(e)}") from e
    if not np.all(np.isfinite(table)):
        raise TheoryError(f"Green's function ({method}) has non-finite entries")
    logger.debug(f"Built {method} Green's function on {grid.n_grid} nodes, lambda={lam:g}")
    return GreensFunction(grid=grid, table=table, lam=lam, r=r, rho=rho, method=method)


def solve_bvp(lam: float, r: np.ndarray, rho: np.ndarray, H: np.ndarray, grid: Grid1D) -> GridFunction:
    """
    Discrete solve of −λ(ρ f')' + r f = H with f'(0) = f'(1) = 0.

    Examples
    --------
    >>> grid = Grid1D(9)
    >>> ones = np.ones(9)
    >>> np.allclose(solve_bvp(0.1, ones, ones, 3 * ones, grid).values, 3.0)
    True
    """
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    _check_positive(r, rho, lam)
    bands = green_operator_bands(lam, r, rho, grid)
    try:
        values = linalg.solve_banded((1, 1), bands, -np.asarray(H, dtype=float) / lam)
    except (linalg.LinAlgError, ValueError) as e:
        raise TheoryError(f"BVP system is singular: {str(e)}") from e
    return GridFunction(grid, values)


def bvp_residual(
    f: GridFunction, setting: TheorySetting, scheme: PenaltyScheme, H: np.ndarray, rho_nodes: Optional[np.ndarray] = None
) -> float:
    """
    Size of −λ(ρ f')' + r f − H for a candidate solution.

    Returns the trapezoid L² norm over interior nodes plus the absolute
    residuals of the two end control volumes. The latter equal the boundary
    fluxes λρ f' at x = 0 and x = 1 up to O(h), so they measure how far the
    Neumann conditions are violated.
    """
    grid = setting.grid
    rho = setting.rho_field(scheme, rho_nodes).values
    lam = scheme.lambda_
    residual = -lam * _apply_bands(_diffusion_bands(rho, grid.h), f.values) + setting.r * f.values - H
    w = grid.weights
    interior = np.sqrt(np.sum(w[1:-1] * residual[1:-1] ** 2))
    return float(interior + w[0] * abs(residual[0]) + w[-1] * abs(residual[-1]))


def asymptotic_solution(
    setting: TheorySetting,
    scheme: PenaltyScheme,
    noise: Mapping[int, np.ndarray],
    method: str = "discrete",
    rho_nodes: Optional[np.ndarray] = None,
    green: Optional[GreensFunction] = None,
) -> GridFunction:
    """
    Small-λ estimator f* + (λ/r)[ρ f*']' − (1/λ) Σ_e ∫ r̂_e G (ε_e − η_e A_e ỹ_e) dt.

    Parameters
    ----------
    setting : TheorySetting
        Truth, densities and empirical densities r̂_e.
    scheme : PenaltyScheme
        λ, η_e and ρ.
    noise : mapping
        ε_e per domain as node tables; ỹ_e = f* + ε_e.
    method : str
        Green's function method when ``green`` is not given.
    green : GreensFunction, optional
        Prebuilt G for the same λ, r and ρ.

    Returns
    -------
    GridFunction
        Predicted estimator on the grid.
    """
    grid = setting.grid
    rho = setting.rho_field(scheme, rho_nodes)
    lam = scheme.lambda_
    if green is None:
        green = greens_function(lam, setting.r, rho.values, grid, method=method)
    source = np.zeros(grid.n_grid)
    for e in setting.domains:
        eps = np.asarray(noise.get(e, 0.0), dtype=float) * np.ones(grid.n_grid)
        eta = scheme.eta_of(e)
        irm = eta * compute_ae(eta, setting.r_hat[e], setting.r, setting.f_star, grid) if eta > 0 else 0.0
        source += setting.r_hat[e] * (eps - irm * (setting.f_star + eps))
    values = setting.f_star + lam / setting.r * setting.flux_prime(rho) - green.apply(source) / lam
    return GridFunction(grid, values)


@dataclass
class EmpiricalMeasures:
    """
    Node tables of the empirical measures of 1-D samples.

    ``r_hat[e]`` is the hat-function deposit of mass 1/N_e per sample and
    ``y_tilde[e]`` the deposited label average, so ∫ g r̂_e ỹ_e dx equals
    (1/N_e) Σ_i g(x_i) y_i for piecewise-linear g. ``rho_cells`` holds the
    sample-averaged Lipschitz weight of each cell.
    """

    grid: Grid1D
    r_hat: Dict[int, np.ndarray]
    y_tilde: Dict[int, np.ndarray]
    domain_sizes: Dict[int, int]
    rho_cells: np.ndarray

    @property
    def r(self) -> np.ndarray:
        return np.sum(list(self.r_hat.values()), axis=0)


def sample_rho(dataset: DomainDataset, scheme: PenaltyScheme, grouping: Optional[Grouping] = None) -> np.ndarray:
    """Per-sample ρ from the sample's group: ``grouping``, else ``group_ids``, else group 0."""
    if grouping is not None:
        groups = grouping.assignment[dataset.domain_id]
    elif dataset.group_ids is not None:
        groups = dataset.group_ids
    else:
        groups = np.zeros(dataset.n, dtype=int)
    return scheme.rho_of(groups)


def empirical_measures(
    data: Sequence[DomainDataset], grid: Grid1D, scheme: Optional[PenaltyScheme] = None
) -> EmpiricalMeasures:
    """Deposit 1-D domain samples onto ``grid`` (features must lie in [0, 1])."""
    r_hat, y_tilde, sizes = {}, {}, {}
    xs, rhos = [], []
    for dataset in data:
        x = dataset.x[:, 0]
        e = dataset.domain_id
        mass = grid.deposit(x)
        label_mass = grid.deposit(x, dataset.y)
        r_hat[e] = mass / dataset.n
        y_tilde[e] = np.divide(label_mass, mass, out=np.zeros_like(mass), where=mass > 0)
        sizes[e] = dataset.n
        xs.append(x)
        rhos.append(sample_rho(dataset, scheme) if scheme is not None else np.ones(dataset.n))
    rho_cells = cell_average(grid, np.concatenate(xs), np.concatenate(rhos))
    return EmpiricalMeasures(grid=grid, r_hat=r_hat, y_tilde=y_tilde, domain_sizes=sizes, rho_cells=rho_cells)


def lemma1_residual(f: GridFunction, measures: EmpiricalMeasures, scheme: PenaltyScheme) -> float:
    """
    Sup-norm of the first-order optimality residual of a 1-D estimator.

    At every cell midpoint x_{J+1/2} the residual is

        Σ_{j≤J} w_j [ r̂ f − Σ_e r̂_e ỹ_e (1 − η_e A_e) ]_j − λ ρ_J f'_J

    with f'_J the slope of cell J and A_e = 4 ∫ f (ỹ_e − f) dr̂_e evaluated
    at ``f``. The cumulative sums are control-volume integrals from 0.
    """
    grid = measures.grid
    if f.grid.n_grid != grid.n_grid:
        raise TheoryError("lemma1_residual: f and the measures live on different grids")
    w = grid.weights
    values = f.values
    integrand = measures.r * values
    for e, r_hat in measures.r_hat.items():
        eta = scheme.eta_of(e)
        a_e = 4.0 * grid.integrate(values * (measures.y_tilde[e] - values) * r_hat)
        integrand = integrand - r_hat * measures.y_tilde[e] * (1.0 - eta * a_e)
    balance = np.cumsum(w * integrand)[:-1]
    residual = balance - scheme.lambda_ * measures.rho_cells * f.slopes()
    return float(np.max(np.abs(residual)))
