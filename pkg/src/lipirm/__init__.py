"""
LipIRM
======

Lipschitz-regularized invariant risk minimization with optimized penalties.

Main Components
---------------
- data: multi-domain datasets, groupings and per-group statistics
- penalties: penalty schemes and the optimal λ, η_e and ρ_k formulas
- theory: closed-form expected risk of the 1-D estimator
- bvp: Green's functions, boundary value solves and the small-λ estimator
- solver: direct minimization of the empirical loss over grid functions
- trainer: MLP training with IRM and Lipschitz penalties, and the two-phase RPO loop
- benchmark / benchmarks: registry of synthetic benchmark generators
- stats: metrics, Welch's t-test, Monte-Carlo risk and penalty grid search
- oracles: acceptance checks against independent references

Example usage::

    from lipirm import generate_benchmark, train

    bundle = generate_benchmark("two_bit", {"preset": "setting1"}, seed=0)
    run = train("rpo", bundle, seed=0)
    print(run.metrics["test_acc"], run.scheme.eta)

Custom benchmarks subclass :class:`BenchmarkGenerator` and register with
:func:`register_benchmark`.
"""

from .config import Config, get_config
from .benchmark import (
    BenchmarkError,
    BenchmarkGenerator,
    generate_benchmark,
    get_benchmark,
    list_benchmarks,
    register_benchmark,
)
from .data import DatasetBundle, DomainDataset, Grouping, GroupStatistics, estimate_density, estimate_noise_variance
from .grid import Grid1D, GridFunction
from .penalties import PenaltyScheme, optimal_eta, optimal_lambda, optimal_rho
from .theory import TheorySetting, companion_lambda, theorem1_risk
from .bvp import asymptotic_solution, greens_function, solve_bvp
from .solver import minimize
from .stats import auc, monte_carlo_risk, welch_t_test
from .trainer import ExperimentRun, lipirm_loss_and_grad, rpo_penalties, train
from .oracles import Verdict, run_checks

# Import built-in benchmarks to auto-register them
from . import benchmarks

try:
    from ._version import __version__
except ImportError:
    __version__ = "0.1.0"

__all__ = [
    "Config",
    "get_config",
    "BenchmarkError",
    "BenchmarkGenerator",
    "generate_benchmark",
    "get_benchmark",
    "list_benchmarks",
    "register_benchmark",
    "DatasetBundle",
    "DomainDataset",
    "Grouping",
    "GroupStatistics",
    "estimate_density",
    "estimate_noise_variance",
    "Grid1D",
    "GridFunction",
    "PenaltyScheme",
    "optimal_eta",
    "optimal_lambda",
    "optimal_rho",
    "TheorySetting",
    "companion_lambda",
    "theorem1_risk",
    "asymptotic_solution",
    "greens_function",
    "solve_bvp",
    "minimize",
    "auc",
    "monte_carlo_risk",
    "welch_t_test",
    "ExperimentRun",
    "lipirm_loss_and_grad",
    "rpo_penalties",
    "train",
    "Verdict",
    "run_checks",
]
