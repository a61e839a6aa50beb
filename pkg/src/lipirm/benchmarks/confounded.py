"""
Confounded Multi-Domain Regression
==================================

Base features X ~ N(0, I_d) drive the label y = Xβ + noise; confounders
Z = W y + α_e V are linear transforms of the label plus Gaussian noise
scaled by a per-domain α_e. β and W are drawn once per seed and shared by
all domains; V is drawn per sample. Small training α makes Z look highly
predictive; large test α removes that shortcut.

Features are ``[X | Z]``. Training domains get ids 0.., then the
validation domain, then test domains.
"""

import logging
from typing import List

import numpy as np

from ..benchmark import BenchmarkGenerator
from ..data import DatasetBundle, DomainDataset
from ..rng import make_rng
from ..schemas import ConfounderConfig

logger = logging.getLogger(__name__)


def _domain(domain_id: int, alpha: float, beta: np.ndarray, w: np.ndarray, config: ConfounderConfig) -> DomainDataset:
    n = config.n_per_domain
    x = make_rng(config.seed, "data", domain_id, "x").standard_normal((n, config.base_dim))
    noise = make_rng(config.seed, "data", domain_id, "noise").standard_normal(n)
    y = x @ beta + config.noise_sd * noise
    v = make_rng(config.seed, "data", domain_id, "confounder").standard_normal((n, config.confounder_dim))
    z = np.outer(y, w) + alpha * v
    return DomainDataset(domain_id=domain_id, x=np.hstack([x, z]), y=y)


def gen_confounded_regression(config: ConfounderConfig) -> DatasetBundle:
    """
    Generate the confounded regression bundle.

    Parameters
    ----------
    config : ConfounderConfig
        Dimensions, sample size and α per split (filled from the preset).

    Returns
    -------
    DatasetBundle
        ``metadata`` records β, W and the α of every domain.
    """
    beta = make_rng(config.seed, "data", "beta").standard_normal(config.base_dim)
    w = make_rng(config.seed, "data", "W").standard_normal(config.confounder_dim)

    alphas = {"train": list(config.train_alpha), "validation": [], "test": list(config.test_alpha)}
    if config.validation_alpha is not None:
        alphas["validation"] = [config.validation_alpha]

    splits = {}
    domain_alpha = {}
    next_id = 0
    for split in ("train", "validation", "test"):
        domains: List[DomainDataset] = []
        for alpha in alphas[split]:
            domains.append(_domain(next_id, alpha, beta, w, config))
            domain_alpha[next_id] = alpha
            next_id += 1
        splits[split] = domains

    logger.debug(f"Confounded regression: d={config.base_dim}, m={config.confounder_dim}, alphas={domain_alpha}")
    return DatasetBundle(
        train=splits["train"],
        validation=splits["validation"],
        test=splits["test"],
        task="regression",
        metadata={"beta": beta.tolist(), "W": w.tolist(), "alpha": {str(k): v for k, v in domain_alpha.items()}},
    )


class ConfoundedGenerator(BenchmarkGenerator):
    """Linear regression with label-driven confounders."""

    benchmark_name = "confounded"
    benchmark_description = "Confounded multi-domain regression, Z = W y + alpha_e V"
    task = "regression"
    config_model = ConfounderConfig

    def build(self, config: ConfounderConfig) -> DatasetBundle:
        return gen_confounded_regression(config)


def _register():
    from ..benchmark import register_benchmark

    register_benchmark(ConfoundedGenerator())


_register()
