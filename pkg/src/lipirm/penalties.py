"""
Penalty Optimizer
=================

Optimal regularization schemes for the LipIRM loss: the global Lipschitz
scale λ, one IRM weight η_e per domain and one Lipschitz weight ρ_k per
group.

Two families are provided:

- tractable forms, which only need the group statistics
  (r̂_{e,k}, σ²_{e,k}) and domain sizes;
- exact forms, which also need per-group truth values f_k and curvatures
  f''_k and reduce to the tractable ones when both equal 1.

The constant factors 4^{-2/5} and 4^{-7/5} are kept as derived even though
only relative weights matter once λ is chosen separately.
"""

import logging
import math
from typing import Dict, Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .config import get_config
from .data import GroupStatistics

logger = logging.getLogger(__name__)

RHO_FACTOR = 4.0 ** (-2.0 / 5.0)
ETA_FACTOR = 4.0 ** (-7.0 / 5.0)
CURVATURE_FLOOR = 1e-12


class PenaltyError(Exception):
    """Exception raised when a penalty scheme cannot be computed."""

    pass


class PenaltyScheme(BaseModel):
    """
    Full regularization configuration (λ, η_e, ρ_k).

    Serializes to ``{"lambda": ..., "eta": {domain: value}, "rho": {group: value}, "rho_default": ...}``.
    Groups without an entry in ``rho`` use ``rho_default``, domains without
    an entry in ``eta`` carry no IRM term.

    Examples
    --------
    >>> scheme = PenaltyScheme(lambda_=0.1, eta={0: 1.0}, rho={0: 1.0})
    >>> scheme.to_json()
    '{"lambda":0.1,"eta":{"0":1.0},"rho":{"0":1.0},"rho_default":1.0}'
    """

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    lambda_: float = Field(alias="lambda")
    eta: Dict[int, float] = Field(default_factory=dict)
    rho: Dict[int, float] = Field(default_factory=dict)
    rho_default: float = 1.0

    @field_validator("lambda_")
    @classmethod
    def validate_lambda(cls, v: float) -> float:
        """Ensure λ is positive and finite."""
        if not math.isfinite(v) or v <= 0:
            raise ValueError(f"lambda must be positive and finite, got {v}")
        return v

    @field_validator("eta")
    @classmethod
    def validate_eta(cls, v: Dict[int, float]) -> Dict[int, float]:
        """Ensure every η_e is finite and non-negative."""
        for domain, value in v.items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"eta[{domain}] must be finite and >= 0, got {value}")
        return v

    @field_validator("rho_default")
    @classmethod
    def validate_rho_default(cls, v: float) -> float:
        if not math.isfinite(v) or v <= 0:
            raise ValueError(f"rho_default must be finite and > 0, got {v}")
        return v

    @field_validator("rho")
    @classmethod
    def validate_rho(cls, v: Dict[int, float]) -> Dict[int, float]:
        """Ensure every ρ_k is finite and positive."""
        for group, value in v.items():
            if not math.isfinite(value) or value <= 0:
                raise ValueError(f"rho[{group}] must be finite and > 0, got {value}")
        return v

    def rho_of(self, groups: np.ndarray) -> np.ndarray:
        """Per-sample ρ for an array of group indices."""
        return np.array([self.rho.get(int(k), self.rho_default) for k in np.asarray(groups).reshape(-1)], dtype=float)

    def eta_of(self, domain_id: int, default: float = 0.0) -> float:
        return float(self.eta.get(domain_id, default))

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True)

    @classmethod
    def from_json(cls, text: str) -> "PenaltyScheme":
        return cls.model_validate_json(text)


class ExactPenaltyInputs(BaseModel):
    """Per-group truth values f_k and second derivatives f''_k."""

    model_config = ConfigDict(extra="forbid")

    f_value: Dict[int, float]
    f_second: Dict[int, float]

    @field_validator("f_value", "f_second")
    @classmethod
    def validate_finite(cls, v: Dict[int, float]) -> Dict[int, float]:
        """Ensure all entries are finite."""
        for group, value in v.items():
            if not math.isfinite(value):
                raise ValueError(f"Group {group}: value must be finite, got {value}")
        return v

    @classmethod
    def unit(cls, groups: Iterable[int]) -> "ExactPenaltyInputs":
        """Inputs with f_k = f''_k = 1 (the tractable reduction)."""
        groups = list(groups)
        return cls(f_value={k: 1.0 for k in groups}, f_second={k: 1.0 for k in groups})


def uniform_scheme(
    lam: float, domains: Iterable[int], groups: Iterable[int], eta: float = 1.0, rho: float = 1.0
) -> PenaltyScheme:
    """Scheme with the same η on every domain and the same ρ on every group."""
    return PenaltyScheme(
        lambda_=lam,
        eta={int(e): float(eta) for e in domains},
        rho={int(k): float(rho) for k in groups},
    )


def optimal_lambda(domain_sizes: Union[Sequence[int], Mapping[int, int]]) -> float:
    """
    Simple optimal Lipschitz scale λ = (Σ_e 1/N_e)^{2/5}.

    Parameters
    ----------
    domain_sizes : sequence or mapping of int
        Sample counts N_e of the training domains.

    Returns
    -------
    float

    Raises
    ------
    PenaltyError
        If no sizes are given or a size is below 1.

    Examples
    --------
    >>> optimal_lambda([1])
    1.0
    >>> round(optimal_lambda([32, 32]), 5)
    0.32988
    """
    sizes = list(domain_sizes.values()) if isinstance(domain_sizes, Mapping) else list(domain_sizes)
    if not sizes:
        raise PenaltyError("optimal_lambda needs at least one domain size")
    if any(n < 1 for n in sizes):
        raise PenaltyError(f"Domain sizes must be >= 1, got {sizes}")
    return math.fsum(1.0 / n for n in sizes) ** 0.4


def _ratio_power(stats: GroupStatistics, e: int, k: int) -> float:
    """(σ_{e,k}/r̂_{e,k})^{4/5} for an occupied cell."""
    r_hat = stats.r_hat[(e, k)]
    if r_hat <= 0:
        raise PenaltyError(f"degenerate density: group {k} of domain {e} is marked present with r_hat = {r_hat}")
    return (stats.sigma((e, k)) / r_hat) ** 0.8


def _occupied(stats: GroupStatistics, e: int, k: int) -> bool:
    return stats.indicator.get((e, k), 0) == 1


def _clamp_rho(rho: Dict[int, float], rho_floor: float) -> Dict[int, float]:
    clamped = {}
    for k, value in rho.items():
        if value < rho_floor:
            logger.warning(f"rho[{k}] = {value:.3g} clamped to the floor {rho_floor:g}")
            value = rho_floor
        clamped[k] = value
    return clamped


def _cap_eta(e: int, n_e: int, bracket: float, eta_cap: float) -> float:
    if bracket <= 0 or n_e * ETA_FACTOR / bracket > eta_cap:
        logger.warning(f"eta[{e}] capped at {eta_cap:g} (bracket {bracket:.3g})")
        return eta_cap
    return n_e * ETA_FACTOR / bracket


def optimal_rho(stats: GroupStatistics, rho_floor: Optional[float] = None) -> Dict[int, float]:
    """
    Tractable optimal Lipschitz weights ρ_k* = 4^{-2/5} Σ_e (σ_{e,k}/r̂_{e,k})^{4/5} 𝟙_{e,k}.

    Values below ``rho_floor`` (config default 1e-6) are clamped to it.

    Raises
    ------
    PenaltyError
        "degenerate density" when a present cell has r̂ = 0.
    """
    rho_floor = get_config().rho_floor if rho_floor is None else rho_floor
    rho = {}
    for k in range(stats.k_count):
        terms = [_ratio_power(stats, e, k) for e in stats.domains if _occupied(stats, e, k)]
        rho[k] = RHO_FACTOR * math.fsum(terms)
    return _clamp_rho(rho, rho_floor)


def optimal_eta(
    stats: GroupStatistics,
    domain_sizes: Optional[Mapping[int, int]] = None,
    eta_cap: Optional[float] = None,
) -> Dict[int, float]:
    """
    Tractable optimal IRM weights η_e* = (N_e / 4^{7/5}) [Σ_k (σ_{e,k}/r̂_{e,k})^{4/5} 𝟙_{e,k}]^{-1}.

    Parameters
    ----------
    stats : GroupStatistics
        Statistics with ``sigma2`` filled.
    domain_sizes : mapping, optional
        N_e per domain; defaults to ``stats.domain_sizes``.
    eta_cap : float, optional
        Upper cap (config default 1e6) reached in the zero-noise limit.

    Raises
    ------
    PenaltyError
        "domain has no groups" when a domain has no occupied group.

    Examples
    --------
    A single group with σ = r̂ = 1 and N_e = 100 gives 100 / 4^{7/5} ≈ 14.3587.
    """
    eta_cap = get_config().eta_cap if eta_cap is None else eta_cap
    sizes = stats.domain_sizes if domain_sizes is None else domain_sizes
    eta = {}
    for e in stats.domains:
        groups = [k for k in range(stats.k_count) if _occupied(stats, e, k)]
        if not groups:
            raise PenaltyError(f"domain has no groups: domain {e}")
        bracket = math.fsum(_ratio_power(stats, e, k) for k in groups)
        eta[e] = _cap_eta(e, sizes[e], bracket, eta_cap)
    return eta


def _signed_power(value: float, exponent: float) -> float:
    return math.copysign(abs(value) ** exponent, value)


def exact_optimal_eta(
    stats: GroupStatistics,
    domain_sizes: Optional[Mapping[int, int]],
    extra: ExactPenaltyInputs,
    eta_cap: Optional[float] = None,
) -> Dict[int, float]:
    """
    Exact per-group optimal IRM weights.

    η_e* = (N_e / 4^{7/5}) [Σ_k σ_{e,k}^{4/5} (f''_k)^{3/5} f_k / r̂_{e,k}^{4/5}]^{-1}

    The curvature keeps its sign through the real fifth root, so
    (f''_k)^{3/5} f_k is negative where curvature and value disagree in
    sign. A bracket that is zero or negative has no finite optimum and is
    rejected. :func:`exact_optimal_rho` uses |f''_k| instead, since there
    the curvature enters squared.

    Raises
    ------
    PenaltyError
        "exact form requires positive bracket" for a zero or negative
        bracket, and the errors of :func:`optimal_eta`.
    """
    eta_cap = get_config().eta_cap if eta_cap is None else eta_cap
    sizes = stats.domain_sizes if domain_sizes is None else domain_sizes
    eta = {}
    for e in stats.domains:
        groups = [k for k in range(stats.k_count) if _occupied(stats, e, k)]
        if not groups:
            raise PenaltyError(f"domain has no groups: domain {e}")
        terms = []
        for k in groups:
            curvature = _signed_power(extra.f_second[k], 0.6)
            terms.append(_ratio_power(stats, e, k) * curvature * extra.f_value[k])
        bracket = math.fsum(terms)
        if bracket <= 0:
            raise PenaltyError(f"exact form requires positive bracket: domain {e} has bracket {bracket:.6g}")
        eta[e] = _cap_eta(e, sizes[e], bracket, eta_cap)
    return eta


def exact_optimal_rho(
    stats: GroupStatistics, extra: ExactPenaltyInputs, rho_floor: Optional[float] = None
) -> Dict[int, float]:
    """
    Exact per-group optimal Lipschitz weights ρ_k* = Σ_e σ^{4/5} / (4^{2/5} |f''_k|^{2/5} r̂^{4/5}).

    Only the curvature magnitude enters, unlike the signed fifth root of
    :func:`exact_optimal_eta`; magnitudes below 1e-12 are floored.
    """
    rho_floor = get_config().rho_floor if rho_floor is None else rho_floor
    rho = {}
    for k in range(stats.k_count):
        curvature = max(abs(extra.f_second[k]), CURVATURE_FLOOR) ** 0.4
        terms = [_ratio_power(stats, e, k) for e in stats.domains if _occupied(stats, e, k)]
        rho[k] = RHO_FACTOR * math.fsum(terms) / curvature
    return _clamp_rho(rho, rho_floor)


def exact_optimal_eta_continuous(
    flux_prime: np.ndarray,
    f_star: np.ndarray,
    r_hat: Mapping[int, np.ndarray],
    weights: np.ndarray,
    domain_sizes: Mapping[int, int],
    eta_cap: Optional[float] = None,
) -> Dict[int, float]:
    """
    Continuous exact IRM weights η_e* = (N_e/4) |∫ [ρ f*']' f* / r̂_e dx|^{-1}.

    The integral runs over the support of r̂_e with the quadrature
    ``weights`` of the grid. The absolute value is taken before inversion.

    Parameters
    ----------
    flux_prime : numpy.ndarray
        Node table of [ρ f*']'.
    f_star : numpy.ndarray
        Node table of f*.
    r_hat : mapping
        Per-domain empirical density node tables.
    weights : numpy.ndarray
        Quadrature weights of the grid nodes.
    domain_sizes : mapping
        N_e per domain.
    """
    eta_cap = get_config().eta_cap if eta_cap is None else eta_cap
    eta = {}
    for e, density in r_hat.items():
        support = density > 0
        if not np.any(support):
            raise PenaltyError(f"domain has no groups: domain {e} has an empty density table")
        integrand = np.zeros_like(density, dtype=float)
        integrand[support] = flux_prime[support] * f_star[support] / density[support]
        bracket = abs(float(np.sum(weights * integrand)))
        if bracket == 0 or domain_sizes[e] / (4.0 * bracket) > eta_cap:
            eta[e] = eta_cap
        else:
            eta[e] = domain_sizes[e] / (4.0 * bracket)
    return eta


def reduced_group_risk(rho: Mapping[int, float], stats: GroupStatistics, extra: ExactPenaltyInputs) -> float:
    """
    Per-group reduced risk whose stationary points are the exact ρ forms.

    Σ_k Σ_e 𝟙_{e,k} (1/r̂_{e,k}) [ |f''_k| q² + σ²_{e,k} √r̂_{e,k} q^{-1/2} ],  q = r̂_{e,k} ρ_k

    The curvature term is the squared Lipschitz bias of group k; the second
    term its noise variance. ``q`` undoes the inverse-density importance
    weight applied to ρ.
    """
    total = []
    for k, value in rho.items():
        curvature = max(abs(extra.f_second[k]), CURVATURE_FLOOR)
        for e in stats.domains:
            if not _occupied(stats, e, k):
                continue
            r_hat = stats.r_hat[(e, k)]
            q = r_hat * value
            total.append((curvature * q**2 + stats.sigma2.get((e, k), 0.0) * math.sqrt(r_hat) / math.sqrt(q)) / r_hat)
    return math.fsum(total)


def scheme_rows(scheme: PenaltyScheme):
    """Yield ``(kind, key, value)`` rows for weight-visualization CSVs."""
    yield ("lambda", "", scheme.lambda_)
    for e, value in sorted(scheme.eta.items()):
        yield ("eta", e, value)
    for k, value in sorted(scheme.rho.items()):
        yield ("rho", k, value)
