"""
Theory Engine
=============

Closed-form expected-risk analysis of the LipIRM estimator in one dimension.

For a penalty scheme (λ, η_e, ρ) the leading-order bias and variance of the
estimator are

    bias²(x) = λ² [ [ρ f*']'/r − Σ_e η_e A_e r̂_e f*/r ]²
    var(x)   = λ^{-1/2} Σ_e r̂_e σ_e² / (N_e r √(r ρ))

with A_e = [4 η_e² ∫ r̂_e³/r² f*² dx]^{-1}, and the expected risk is the
integral of their sum over [0, 1]. A domain with η_e = 0 carries no IRM term.

Besides the risk itself this module provides the quantities derived from
it: the risk-minimizing λ for a fixed (η, ρ), and the stationary η (for
fixed ρ) and ρ_k (for fixed η) used to check the penalty formulas.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional, Union

import numpy as np
from scipy import linalg, optimize

from .data import GroupStatistics
from .grid import Grid1D, finite_difference_second, node_groups_from_edges, write_node_table
from .penalties import ExactPenaltyInputs, PenaltyScheme

logger = logging.getLogger(__name__)

NodeTable = np.ndarray
Profile = Union[float, Callable[[np.ndarray], np.ndarray], np.ndarray]


class TheoryError(Exception):
    """Exception raised for invalid theory settings, degenerate integrals and BVP failures."""

    pass


def _as_table(grid: Grid1D, profile: Profile, name: str) -> NodeTable:
    if callable(profile):
        table = grid.tabulate(profile)
    else:
        table = np.asarray(profile, dtype=float) * np.ones(grid.n_grid)
    if table.shape != (grid.n_grid,):
        raise TheoryError(f"{name}: expected {grid.n_grid} node values, got shape {table.shape}")
    if not np.all(np.isfinite(table)):
        raise TheoryError(f"{name}: node values must be finite")
    return table


@dataclass
class RhoField:
    """Lipschitz weight ρ(x) on the grid with its derivative ρ'(x)."""

    values: NodeTable
    derivative: NodeTable

    @classmethod
    def constant(cls, grid: Grid1D, value: float) -> "RhoField":
        return cls(np.full(grid.n_grid, float(value)), np.zeros(grid.n_grid))

    @classmethod
    def from_groups(
        cls, node_groups: np.ndarray, rho: Mapping[int, float], default: float = 1.0
    ) -> "RhoField":
        """Piecewise-constant ρ over node groups; ρ' is taken as 0 inside every group."""
        values = np.array([rho.get(int(k), default) for k in node_groups], dtype=float)
        return cls(values, np.zeros_like(values))

    @classmethod
    def from_nodes(cls, grid: Grid1D, values: np.ndarray) -> "RhoField":
        values = _as_table(grid, values, "rho")
        return cls(values, np.gradient(values, grid.h, edge_order=2))


@dataclass
class TheorySetting:
    """
    A one-dimensional multi-domain problem on a grid.

    Parameters
    ----------
    grid : Grid1D
        Discretization of [0, 1].
    densities : dict
        True density r_e per domain as node tables.
    noise_sd : dict
        Noise standard deviation σ_e per domain as node tables.
    f_star, df_star, d2f_star : numpy.ndarray
        Ground truth and its first two derivatives on the nodes.
    domain_sizes : dict
        N_e per domain.
    empirical_densities : dict, optional
        r̂_e per domain; defaults to ``densities``.
    node_groups : numpy.ndarray, optional
        Group index per node, used to map ``scheme.rho`` onto the grid.
    """

    grid: Grid1D
    densities: Dict[int, NodeTable]
    noise_sd: Dict[int, NodeTable]
    f_star: NodeTable
    df_star: NodeTable
    d2f_star: NodeTable
    domain_sizes: Dict[int, int]
    empirical_densities: Optional[Dict[int, NodeTable]] = None
    node_groups: Optional[np.ndarray] = None
    _r: NodeTable = field(init=False, repr=False)

    def __post_init__(self):
        if not self.densities:
            raise TheoryError("A theory setting needs at least one domain")
        for name in ("f_star", "df_star", "d2f_star"):
            setattr(self, name, _as_table(self.grid, getattr(self, name), name))
        self.densities = {int(e): _as_table(self.grid, t, f"r[{e}]") for e, t in self.densities.items()}
        self.noise_sd = {int(e): _as_table(self.grid, t, f"sigma[{e}]") for e, t in self.noise_sd.items()}
        if self.empirical_densities is None:
            self.empirical_densities = dict(self.densities)
        else:
            self.empirical_densities = {
                int(e): _as_table(self.grid, t, f"r_hat[{e}]") for e, t in self.empirical_densities.items()
            }
        for e in self.densities:
            if e not in self.noise_sd or e not in self.domain_sizes:
                raise TheoryError(f"Domain {e} needs a noise profile and a sample size")
            if np.any(self.noise_sd[e] < 0):
                raise TheoryError(f"sigma[{e}] must be non-negative")
            if np.any(self.densities[e] < 0) or np.any(self.empirical_densities[e] < 0):
                raise TheoryError(f"Densities of domain {e} must be non-negative")
        self._r = np.sum([self.densities[e] for e in self.domains], axis=0)
        if np.any(self._r <= 0):
            raise TheoryError("total density r(x) must be positive on every node")

    @property
    def domains(self):
        return sorted(self.densities)

    @property
    def r(self) -> NodeTable:
        return self._r

    @property
    def r_hat(self) -> Dict[int, NodeTable]:
        return self.empirical_densities

    def rho_field(self, scheme: PenaltyScheme, rho_nodes: Optional[np.ndarray] = None) -> RhoField:
        """
        Map the scheme's ρ onto the grid.

        ``rho_nodes`` takes precedence; otherwise ``node_groups`` select
        ``scheme.rho[k]``, and without groups every node uses group 0.
        """
        if rho_nodes is not None:
            field_ = RhoField.from_nodes(self.grid, rho_nodes)
        else:
            groups = self.node_groups if self.node_groups is not None else np.zeros(self.grid.n_grid, dtype=int)
            field_ = RhoField.from_groups(groups, scheme.rho, default=scheme.rho_default)
        if np.any(field_.values <= 0):
            raise TheoryError("rho(x) must be positive on every node")
        return field_

    def flux_prime(self, rho: RhoField) -> NodeTable:
        """[ρ f*']' = ρ f*'' + ρ' f*'."""
        return rho.values * self.d2f_star + rho.derivative * self.df_star

    @classmethod
    def from_profiles(
        cls,
        grid: Grid1D,
        densities: Mapping[int, Profile],
        noise_sd: Mapping[int, Profile],
        truth: Callable[[np.ndarray], np.ndarray],
        domain_sizes: Mapping[int, int],
        truth_d1: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        truth_d2: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        empirical_densities: Optional[Mapping[int, Profile]] = None,
    ) -> "TheorySetting":
        """
        Build a setting from callables or constants.

        Missing derivatives of the truth are approximated by finite
        differences (second order for f', five-point for f'').

        Examples
        --------
        >>> s = TheorySetting.from_profiles(Grid1D(9), {0: 1.0}, {0: 0.1}, lambda x: 1 + 0 * x, {0: 100})
        >>> float(s.r[0])
        1.0
        """
        f_star = grid.tabulate(truth)
        df = grid.tabulate(truth_d1) if truth_d1 is not None else np.gradient(f_star, grid.h, edge_order=2)
        d2f = grid.tabulate(truth_d2) if truth_d2 is not None else finite_difference_second(f_star, grid.h)
        empirical = None
        if empirical_densities is not None:
            empirical = {e: _as_table(grid, p, f"r_hat[{e}]") for e, p in empirical_densities.items()}
        return cls(
            grid=grid,
            densities={e: _as_table(grid, p, f"r[{e}]") for e, p in densities.items()},
            noise_sd={e: _as_table(grid, p, f"sigma[{e}]") for e, p in noise_sd.items()},
            f_star=f_star,
            df_star=df,
            d2f_star=d2f,
            domain_sizes={int(e): int(n) for e, n in domain_sizes.items()},
            empirical_densities=empirical,
        )


def piecewise_setting(
    grid: Grid1D,
    stats: GroupStatistics,
    extra: ExactPenaltyInputs,
    domain_sizes: Optional[Mapping[int, int]] = None,
) -> TheorySetting:
    """
    Setting whose groups are the equal-width intervals [k/K, (k+1)/K).

    Group k carries the constant values r̂_{e,k}, σ²_{e,k}, f_k and f''_k;
    the true density equals the empirical one and f*' is 0 inside groups.
    A group that no domain occupies leaves r(x) = 0 there and is rejected.
    """
    node_groups = node_groups_from_edges(grid, np.linspace(0.0, 1.0, stats.k_count + 1))
    densities, noise = {}, {}
    for e in stats.domains:
        r_e = np.zeros(grid.n_grid)
        s_e = np.zeros(grid.n_grid)
        for k in range(stats.k_count):
            mask = node_groups == k
            if stats.indicator.get((e, k), 0):
                r_e[mask] = stats.r_hat[(e, k)]
                s_e[mask] = stats.sigma((e, k))
        densities[e] = r_e
        noise[e] = s_e
    f_value = np.array([extra.f_value[k] for k in node_groups], dtype=float)
    f_second = np.array([extra.f_second[k] for k in node_groups], dtype=float)
    sizes = stats.domain_sizes if domain_sizes is None else domain_sizes
    return TheorySetting(
        grid=grid,
        densities=densities,
        noise_sd=noise,
        f_star=f_value,
        df_star=np.zeros(grid.n_grid),
        d2f_star=f_second,
        domain_sizes={int(e): int(sizes[e]) for e in stats.domains},
        node_groups=node_groups,
    )


@dataclass
class TheoryReport:
    """Leading-order risk decomposition of a penalty scheme."""

    grid: Grid1D
    lam: float
    a_e: Dict[int, float]
    bias2: NodeTable
    variance: NodeTable
    risk: float

    def to_dict(self) -> Dict[str, object]:
        return {
            "lambda": self.lam,
            "a_e": {str(e): v for e, v in sorted(self.a_e.items())},
            "risk": self.risk,
            "integrated_bias2": self.grid.integrate(self.bias2),
            "integrated_variance": self.grid.integrate(self.variance),
            "n_grid": self.grid.n_grid,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self, path: Union[str, Path]) -> Path:
        """Node tables (x, bias2, variance) for plotting."""
        return write_node_table(path, self.grid, {"bias2": self.bias2, "variance": self.variance})


def compute_ae(eta_e: float, r_hat_e: NodeTable, r: NodeTable, f_star: NodeTable, grid: Grid1D) -> float:
    """
    Converged IRM penalty A_e = [4 η_e² ∫ (r̂_e³/r²) f*² dx]^{-1}.

    Raises
    ------
    TheoryError
        If η_e ≤ 0, the integrand is not finite, or the integral is 0
        ("degenerate A_e").

    Examples
    --------
    >>> grid = Grid1D(5)
    >>> ones = np.ones(5)
    >>> compute_ae(1.0, ones, ones, ones, grid)
    0.25
    """
    if not eta_e > 0:
        raise TheoryError(f"compute_ae needs eta_e > 0, got {eta_e}")
    integrand = r_hat_e**3 / r**2 * f_star**2
    if not np.all(np.isfinite(integrand)):
        raise TheoryError("compute_ae: integrand is not finite")
    integral = grid.integrate(integrand)
    if integral <= 0:
        raise TheoryError(f"degenerate A_e: integral of r_hat^3 f*^2 / r^2 is {integral:g}")
    return 1.0 / (4.0 * eta_e**2 * integral)


def _irm_products(setting: TheorySetting, scheme: PenaltyScheme) -> Dict[int, float]:
    """η_e A_e per domain (0 when the domain has no IRM weight)."""
    products = {}
    for e in setting.domains:
        eta = scheme.eta_of(e)
        if eta > 0:
            products[e] = eta * compute_ae(eta, setting.r_hat[e], setting.r, setting.f_star, setting.grid)
        else:
            products[e] = 0.0
    return products


def _bias_bracket(setting: TheorySetting, rho: RhoField, products: Mapping[int, float]) -> NodeTable:
    """E(x) = [ρ f*']'/r − Σ_e η_e A_e r̂_e f*/r (bias² = λ² E²)."""
    irm = np.sum([products[e] * setting.r_hat[e] for e in setting.domains], axis=0)
    return (setting.flux_prime(rho) - irm * setting.f_star) / setting.r


def _variance_profile(setting: TheorySetting, rho: RhoField) -> NodeTable:
    """V(x) with var(x) = V(x)/√λ."""
    r = setting.r
    terms = [
        setting.r_hat[e] * setting.noise_sd[e] ** 2 / setting.domain_sizes[e] for e in setting.domains
    ]
    return np.sum(terms, axis=0) / (r * np.sqrt(r * rho.values))


def theorem1_risk(
    setting: TheorySetting, scheme: PenaltyScheme, rho_nodes: Optional[np.ndarray] = None
) -> TheoryReport:
    """
    Expected risk of the LipIRM estimator for ``scheme`` on ``setting``.

    Parameters
    ----------
    setting : TheorySetting
        Densities, noise, truth and sample sizes on a grid.
    scheme : PenaltyScheme
        λ, η_e per domain and ρ_k per group (mapped through
        ``setting.node_groups``).
    rho_nodes : numpy.ndarray, optional
        ρ(x) given directly on the nodes; overrides ``scheme.rho``.

    Returns
    -------
    TheoryReport
        Nodewise bias² and variance, A_e per IRM-weighted domain, and the
        trapezoid integral of bias² + variance.

    Examples
    --------
    >>> s = TheorySetting.from_profiles(Grid1D(9), {0: 1.0}, {0: 0.1}, lambda x: 1 + 0 * x, {0: 100})
    >>> report = theorem1_risk(s, PenaltyScheme(lambda_=0.1, eta={0: 1.0}, rho={0: 1.0}))
    >>> round(report.risk, 7)
    0.0009412
    """
    rho = setting.rho_field(scheme, rho_nodes)
    products = _irm_products(setting, scheme)
    a_e = {e: products[e] / scheme.eta_of(e) for e in products if scheme.eta_of(e) > 0}
    lam = scheme.lambda_
    bias2 = lam**2 * _bias_bracket(setting, rho, products) ** 2
    variance = _variance_profile(setting, rho) / np.sqrt(lam)
    risk = setting.grid.integrate(bias2 + variance)
    logger.debug(f"theorem1_risk: lambda={lam:.4g}, risk={risk:.6g}")
    return TheoryReport(grid=setting.grid, lam=lam, a_e=a_e, bias2=bias2, variance=variance, risk=risk)


def companion_lambda(setting: TheorySetting, scheme: PenaltyScheme, rho_nodes: Optional[np.ndarray] = None) -> float:
    """
    Risk-minimizing λ for the scheme's η and ρ.

    A_e does not depend on λ, so the risk is λ² ∫E² + λ^{-1/2} ∫V and its
    minimizer is λ* = [∫V / (4 ∫E²)]^{2/5}.

    Raises
    ------
    TheoryError
        If the bias bracket or the variance vanishes identically.
    """
    rho = setting.rho_field(scheme, rho_nodes)
    bias = setting.grid.integrate(_bias_bracket(setting, rho, _irm_products(setting, scheme)) ** 2)
    var = setting.grid.integrate(_variance_profile(setting, rho))
    if bias <= 0 or var <= 0:
        raise TheoryError(f"companion lambda undefined: integrated bias {bias:g}, variance {var:g}")
    return (var / (4.0 * bias)) ** 0.4


def conditional_optimal_eta(
    setting: TheorySetting, scheme: PenaltyScheme, rho_nodes: Optional[np.ndarray] = None
) -> Dict[int, float]:
    """
    η_e that make the risk stationary for the scheme's λ and ρ.

    The risk depends on η only through c_e = η_e A_e, and is quadratic in
    c. The normal equations Σ_e' M_ee' c_e' = b_e with
    M_ee' = ∫ r̂_e r̂_e' f*²/r² and b_e = ∫ [ρ f*']' r̂_e f*/r² are solved,
    and η_e = 1/(4 c_e ∫ r̂_e³ f*²/r²).

    Raises
    ------
    TheoryError
        If the system is singular or some c_e ≤ 0 (no finite positive η
        is stationary for that domain).
    """
    rho = setting.rho_field(scheme, rho_nodes)
    grid, r, f = setting.grid, setting.r, setting.f_star
    domains = setting.domains
    flux = setting.flux_prime(rho)
    m = np.array(
        [[grid.integrate(setting.r_hat[a] * setting.r_hat[b] * f**2 / r**2) for b in domains] for a in domains]
    )
    b = np.array([grid.integrate(flux * setting.r_hat[e] * f / r**2) for e in domains])
    try:
        c = linalg.solve(m, b, assume_a="sym")
    except (linalg.LinAlgError, ValueError) as e:
        raise TheoryError(f"conditional eta system is singular: {str(e)}") from e
    eta = {}
    for e, c_e in zip(domains, c):
        if c_e <= 0:
            raise TheoryError(f"no positive stationary eta for domain {e} (eta*A = {c_e:.4g})")
        j_e = grid.integrate(setting.r_hat[e] ** 3 / r**2 * f**2)
        eta[e] = 1.0 / (4.0 * c_e * j_e)
    return eta


def conditional_optimal_rho(setting: TheorySetting, scheme: PenaltyScheme) -> Dict[int, float]:
    """
    Per-group ρ_k that make the risk stationary for the scheme's λ and η.

    Requires ``setting.node_groups`` (ρ is piecewise constant, ρ' = 0). For
    group k the derivative of the risk,

        Σ_j w_j [2λ² (ρ a_j − g_j) a_j − ½ λ^{-1/2} V_j ρ^{-3/2}],

    with a = f*''/r and g = Σ_e η_e A_e r̂_e f*/r, is increasing in ρ; its
    root is found with Brent's method.
    """
    if setting.node_groups is None:
        raise TheoryError("conditional_optimal_rho needs node groups")
    grid, r = setting.grid, setting.r
    lam = scheme.lambda_
    products = _irm_products(setting, scheme)
    a = setting.d2f_star / r
    g = np.sum([products[e] * setting.r_hat[e] for e in setting.domains], axis=0) * setting.f_star / r
    v = _variance_profile(setting, RhoField.constant(grid, 1.0))
    w = grid.weights
    rho = {}
    for k in np.unique(setting.node_groups):
        mask = setting.node_groups == k
        wk, ak, gk, vk = w[mask], a[mask], g[mask], v[mask]

        def slope(q, wk=wk, ak=ak, gk=gk, vk=vk):
            return float(np.sum(wk * (2 * lam**2 * (q * ak - gk) * ak - 0.5 * vk * q**-1.5 / np.sqrt(lam))))

        lo, hi = 1e-12, 1.0
        if slope(lo) >= 0:
            raise TheoryError(f"group {k}: risk is nondecreasing in rho (no noise), no interior optimum")
        while slope(hi) <= 0:
            hi *= 4.0
            if hi > 1e15:
                raise TheoryError(f"group {k}: risk keeps decreasing in rho (no curvature), no interior optimum")
        rho[int(k)] = optimize.brentq(slope, lo, hi, xtol=1e-14, rtol=1e-13)
    return rho
