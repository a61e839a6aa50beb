"""
Two-Bit Classification
======================

A label y ~ Bernoulli(0.5) with two binary features: a causal bit (y
flipped with a fixed probability in every domain) and a spurious bit (y
flipped with a per-domain probability p_e). Training domains have small
p_e, so the spurious bit looks reliable; test domains reverse it.

Every sample carries a latent group id drawn uniformly from
``0 .. n_groups-1``. Corruption acts on selected (group, training domain)
cells only: each targeted sample is kept with probability β and its label
is flipped with probability γ. Bits are encoded as ±1 features.

Base draws and corruption use separate ``(domain, stage)`` streams, so
toggling corruption leaves every untargeted cell byte-identical.
"""

import logging
from typing import Dict, List, Set, Tuple

import numpy as np

from ..benchmark import BenchmarkError, BenchmarkGenerator
from ..data import DatasetBundle, DomainDataset
from ..rng import make_rng
from ..schemas import TwoBitConfig

logger = logging.getLogger(__name__)


def _flip(bits: np.ndarray, probability: float, rng: np.random.Generator) -> np.ndarray:
    return np.where(rng.random(bits.size) < probability, 1 - bits, bits)


def _base_draw(domain_id: int, spurious_flip: float, config: TwoBitConfig) -> Tuple[np.ndarray, ...]:
    rng = make_rng(config.seed, "data", domain_id, "base")
    n = config.n_per_domain
    y = (rng.random(n) < 0.5).astype(int)
    causal = _flip(y, config.causal_flip, rng)
    spurious = _flip(y, spurious_flip, rng)
    groups = rng.integers(0, config.n_groups, size=n)
    return y, causal, spurious, groups


def _corrupt(
    domain_id: int, arrays: Tuple[np.ndarray, ...], targets: Set[int], config: TwoBitConfig
) -> Tuple[np.ndarray, ...]:
    y, causal, spurious, groups = arrays
    rng = make_rng(config.seed, "data", domain_id, "corruption")
    n = y.size
    keep_draw = rng.random(n)
    flip_draw = rng.random(n)
    targeted = np.isin(groups, sorted(targets))
    keep = ~targeted | (keep_draw < config.corruption.beta)
    flipped = targeted & (flip_draw < config.corruption.gamma)
    y = np.where(flipped, 1 - y, y)
    if not np.any(keep):
        raise BenchmarkError(f"corruption emptied domain {domain_id}")
    return y[keep], causal[keep], spurious[keep], groups[keep]


def gen_two_bit(config: TwoBitConfig) -> DatasetBundle:
    """
    Generate the two-bit bundle with group ids attached.

    Raises
    ------
    BenchmarkError
        If downsampling removes every sample of a domain.
    """
    targets_by_domain: Dict[int, Set[int]] = {}
    if config.corruption is not None:
        for group, domain in config.corruption.targets:
            targets_by_domain.setdefault(domain, set()).add(group)

    splits: Dict[str, List[DomainDataset]] = {}
    flips: Dict[str, float] = {}
    next_id = 0
    for split, values in (
        ("train", config.train_flips),
        ("validation", config.validation_flips),
        ("test", config.test_flips),
    ):
        domains = []
        for p in values:
            arrays = _base_draw(next_id, p, config)
            if split == "train" and next_id in targets_by_domain:
                arrays = _corrupt(next_id, arrays, targets_by_domain[next_id], config)
            y, causal, spurious, groups = arrays
            x = np.column_stack([2.0 * causal - 1.0, 2.0 * spurious - 1.0])
            domains.append(DomainDataset(domain_id=next_id, x=x, y=y, group_ids=groups, task="classification"))
            flips[str(next_id)] = p
            next_id += 1
        splits[split] = domains

    targets = [list(t) for t in config.corruption.targets] if config.corruption else []
    return DatasetBundle(
        train=splits["train"],
        validation=splits["validation"],
        test=splits["test"],
        task="classification",
        metadata={"spurious_flip": flips, "corruption_targets": targets},
    )


class TwoBitGenerator(BenchmarkGenerator):
    """Causal plus spurious bit classification with group corruption."""

    benchmark_name = "two_bit"
    benchmark_description = "Two-bit spurious-correlation classification with corrupted groups"
    task = "classification"
    config_model = TwoBitConfig

    def build(self, config: TwoBitConfig) -> DatasetBundle:
        return gen_two_bit(config)


def _register():
    from ..benchmark import register_benchmark

    register_benchmark(TwoBitGenerator())


_register()
