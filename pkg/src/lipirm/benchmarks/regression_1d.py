"""
Heteroskedastic 1-D Regression
==============================

Samples on [0, 1] with density r_e(x) = (k+1)(1−x)^k per domain (k = 0 is
uniform), targets y = f*(x) + σ_e(x)·ε with standard normal ε, and the
matching analytic :class:`~lipirm.theory.TheorySetting`, so simulation and
closed-form theory share one ground truth.
"""

import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..benchmark import BenchmarkGenerator
from ..config import get_config
from ..data import DatasetBundle, DomainDataset
from ..grid import Grid1D
from ..rng import make_rng
from ..schemas import Domain1DSpec, NoiseProfile, Regression1DConfig
from ..theory import TheoryError, TheorySetting

logger = logging.getLogger(__name__)

Curve = Callable[[np.ndarray], np.ndarray]

TRUTHS: Dict[str, Tuple[Curve, Curve, Curve]] = {
    "sine": (
        lambda x: np.sin(2 * np.pi * x),
        lambda x: 2 * np.pi * np.cos(2 * np.pi * x),
        lambda x: -4 * np.pi**2 * np.sin(2 * np.pi * x),
    ),
    "cosine": (
        lambda x: np.cos(np.pi * x),
        lambda x: -np.pi * np.sin(np.pi * x),
        lambda x: -np.pi**2 * np.cos(np.pi * x),
    ),
    "quadratic": (lambda x: x**2, lambda x: 2 * x, lambda x: 2.0 + 0 * x),
    "linear": (lambda x: x, lambda x: 1.0 + 0 * x, lambda x: 0 * x),
    "constant": (lambda x: 0 * x, lambda x: 0 * x, lambda x: 0 * x),
}


def truth_curves(truth: str, offset: float = 0.0) -> Tuple[Curve, Curve, Curve]:
    """f*, f*' and f*'' for a named truth shifted by ``offset``."""
    f, d1, d2 = TRUTHS[truth]
    return (lambda x: f(np.asarray(x, dtype=float)) + offset), d1, d2


def skew_density(k: float) -> Curve:
    """r(x) = (k+1)(1−x)^k."""
    return lambda x: (k + 1.0) * (1.0 - np.asarray(x, dtype=float)) ** k


def sample_skew(k: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw from (k+1)(1−x)^k: x = 1 − (1−u)^{1/(k+1)}."""
    u = rng.random(n)
    return 1.0 - (1.0 - u) ** (1.0 / (k + 1.0))


def noise_curve(profile: NoiseProfile) -> Curve:
    """σ(x) of a noise profile."""
    if profile.kind == "constant":
        return lambda x: profile.sigma + 0 * np.asarray(x, dtype=float)
    if profile.kind == "linear":
        return lambda x: profile.sigma + (profile.sigma_end - profile.sigma) * np.asarray(x, dtype=float)
    levels = np.asarray(profile.levels, dtype=float)

    def piecewise(x):
        index = np.clip((np.asarray(x, dtype=float) * len(levels)).astype(int), 0, len(levels) - 1)
        return levels[index]

    return piecewise


def _draw_domain(
    domain_id: int, spec: Domain1DSpec, truth: Curve, seed: int
) -> DomainDataset:
    x = sample_skew(spec.skew, spec.size, make_rng(seed, "data", domain_id, "x"))
    eps = make_rng(seed, "data", domain_id, "noise").standard_normal(spec.size)
    y = truth(x) + noise_curve(spec.noise)(x) * eps
    return DomainDataset(domain_id=domain_id, x=x, y=y)


def theory_setting(config: Regression1DConfig, grid: Optional[Grid1D] = None) -> TheorySetting:
    """
    Analytic theory setting of the training domains.

    Raises
    ------
    TheoryError
        If the total density vanishes somewhere on the grid (every domain
        skewed, so r(1) = 0).
    """
    grid = grid or Grid1D(get_config().n_grid)
    f, d1, d2 = truth_curves(config.truth, config.offset)
    return TheorySetting.from_profiles(
        grid,
        densities={e: skew_density(spec.skew) for e, spec in enumerate(config.domains)},
        noise_sd={e: noise_curve(spec.noise) for e, spec in enumerate(config.domains)},
        truth=f,
        domain_sizes={e: spec.size for e, spec in enumerate(config.domains)},
        truth_d1=d1,
        truth_d2=d2,
    )


def gen_regression_1d(
    config: Regression1DConfig, grid: Optional[Grid1D] = None
) -> Tuple[List[DomainDataset], List[DomainDataset], Optional[TheorySetting]]:
    """
    Generate training and test domains plus the analytic setting.

    Training domains get ids 0.. and test domains follow. Every domain
    draws features and noise from its own ``(domain, stage)`` stream.

    Returns
    -------
    train : list of DomainDataset
    test : list of DomainDataset
    setting : TheorySetting or None
        None when the total training density vanishes on the grid.
    """
    f, _, _ = truth_curves(config.truth, config.offset)
    train = [_draw_domain(e, spec, f, config.seed) for e, spec in enumerate(config.domains)]
    offset = len(config.domains)
    test = [_draw_domain(offset + i, spec, f, config.seed) for i, spec in enumerate(config.test_domains)]
    try:
        setting = theory_setting(config, grid)
    except TheoryError as e:
        logger.warning(f"No analytic setting for this configuration: {str(e)}")
        setting = None
    return train, test, setting


def draw_from_setting(setting: TheorySetting, rng: np.random.Generator) -> List[DomainDataset]:
    """
    Fresh samples from a theory setting.

    Features follow each domain's tabulated density (inverse of the
    trapezoidal CDF), targets add N(0, σ_e(x)²) noise to the tabulated f*.
    """
    grid = setting.grid
    data = []
    for e in setting.domains:
        n = setting.domain_sizes[e]
        cdf = grid.cumulative(setting.densities[e])
        if cdf[-1] <= 0:
            raise TheoryError(f"Domain {e} has zero total density")
        x = np.clip(np.interp(rng.random(n), cdf / cdf[-1], grid.points), 0.0, 1.0)
        sigma = np.interp(x, grid.points, setting.noise_sd[e])
        y = np.interp(x, grid.points, setting.f_star) + sigma * rng.standard_normal(n)
        data.append(DomainDataset(domain_id=e, x=x, y=y))
    return data


class Regression1DGenerator(BenchmarkGenerator):
    """1-D regression with per-domain density skew and noise profiles."""

    benchmark_name = "regression_1d"
    benchmark_description = "Heteroskedastic 1-D regression on [0, 1] with analytic ground truth"
    task = "regression"
    config_model = Regression1DConfig

    def build(self, config: Regression1DConfig) -> DatasetBundle:
        train, test, setting = gen_regression_1d(config)
        return DatasetBundle(train=train, test=test, task="regression", theory=setting)


def _register():
    from ..benchmark import register_benchmark

    register_benchmark(Regression1DGenerator())


_register()
