"""
Evaluation and Statistics
=========================

Metrics (MSE, accuracy, AUC), Welch's unequal-variance t-test with
significance stars, Monte-Carlo estimates of the expected risk of the
functional solver, and exhaustive grid searches over penalty parameters.

Replications and grid cells run on a thread pool; every cell draws from
its own seeded stream and results are stored by index, so the outcome does
not depend on the number of workers.
"""

import csv
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import betainc
from scipy.stats import rankdata

from .benchmarks.regression_1d import draw_from_setting
from .config import get_config
from .penalties import PenaltyScheme
from .rng import make_rng
from .schemas import SolverConfig
from .solver import SolverError, minimize
from .theory import TheorySetting, theorem1_risk

logger = logging.getLogger(__name__)

STAR_LEVELS = ((0.01, "***"), (0.05, "**"), (0.1, "*"))


class StatsError(Exception):
    """Exception raised for invalid metric inputs and failed risk estimates."""

    pass


def _pair(predictions, labels) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=float).reshape(-1)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if p.shape != y.shape:
        raise StatsError(f"predictions and labels differ in length: {p.size} vs {y.size}")
    if p.size == 0:
        raise StatsError("metrics need at least one sample")
    return p, y


def mse(predictions, labels) -> float:
    """Mean squared error."""
    p, y = _pair(predictions, labels)
    return float(np.mean((p - y) ** 2))


def accuracy(probabilities, labels, threshold: float = 0.5) -> float:
    """Share of samples whose thresholded probability matches the 0/1 label."""
    p, y = _pair(probabilities, labels)
    return float(np.mean((p >= threshold).astype(float) == y))


def auc(scores, labels) -> float:
    """
    Area under the ROC curve via the rank-sum statistic.

    Tied scores get average ranks, i.e. half credit per tied pair.

    Raises
    ------
    StatsError
        If only one class is present.

    Examples
    --------
    >>> auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    0.75
    >>> auc([0.3, 0.3, 0.3], [0, 1, 1])
    0.5
    """
    s, y = _pair(scores, labels)
    positive = y == 1
    n_pos = int(np.sum(positive))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != y.size:
        raise StatsError("auc requires 0/1 labels with both classes present")
    ranks = rankdata(s, method="average")
    return float((np.sum(ranks[positive]) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def describe(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise StatsError("describe needs at least one value")
    return float(np.mean(v)), float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def stars_for(p_value: float) -> str:
    """Significance stars for thresholds 0.01 / 0.05 / 0.1."""
    for level, stars in STAR_LEVELS:
        if p_value < level:
            return stars
    return ""


@dataclass
class TTestResult:
    """Welch t statistic, Welch–Satterthwaite degrees of freedom, p value and stars."""

    t: float
    dof: float
    p: float
    stars: str
    one_sided: bool = False

    def to_dict(self) -> Dict[str, object]:
        return {"t": self.t, "dof": self.dof, "p": self.p, "stars": self.stars, "one_sided": self.one_sided}


def welch_t_test(a: Sequence[float], b: Sequence[float], one_sided: bool = False) -> TTestResult:
    """
    Welch's unequal-variance t-test of equal means.

    Parameters
    ----------
    a, b : sequence of float
        Samples with at least two values each.
    one_sided : bool
        Test the alternative mean(a) > mean(b) instead of mean(a) ≠ mean(b).

    Returns
    -------
    TTestResult
        The two-sided p value is I_{ν/(ν+t²)}(ν/2, 1/2), the regularized
        incomplete beta function at the Student-t tail.

    Notes
    -----
    Two constant samples give t = 0 and p = 1 for equal means and
    t = ±inf, p = 0 otherwise.

    Examples
    --------
    >>> result = welch_t_test([1, 2, 3], [2, 4, 6])
    >>> round(result.t, 4), round(result.dof, 4)
    (-1.5492, 2.9412)
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise StatsError(f"welch_t_test needs at least two values per sample, got {a.size} and {b.size}")
    va = np.var(a, ddof=1) / a.size
    vb = np.var(b, ddof=1) / b.size
    diff = float(np.mean(a) - np.mean(b))
    se2 = va + vb
    if se2 == 0:
        dof = float(a.size + b.size - 2)
        if diff == 0:
            t, two_sided = 0.0, 1.0
        else:
            t, two_sided = math.copysign(math.inf, diff), 0.0
    else:
        t = diff / math.sqrt(se2)
        dof = float(se2**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1)))
        two_sided = float(betainc(dof / 2.0, 0.5, dof / (dof + t * t)))
    if one_sided:
        p = 0.5 * two_sided if t > 0 else 1.0 - 0.5 * two_sided
    else:
        p = two_sided
    p = min(max(p, 0.0), 1.0)
    return TTestResult(t=float(t), dof=dof, p=p, stars=stars_for(p), one_sided=one_sided)


@dataclass
class RiskEstimate:
    """Monte-Carlo mean of ∫(f̂ − f*)² with its standard error."""

    mean: float
    se: float
    replications: int
    values: List[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> Dict[str, object]:
        return {"mean": self.mean, "se": self.se, "replications": self.replications}


def _run_pool(tasks: Mapping[int, Callable[[], float]], jobs: int, describe_task: str) -> Dict[int, float]:
    results: Dict[int, float] = {}
    if jobs <= 1:
        for index, task in tasks.items():
            results[index] = task()
        return results
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        futures = {executor.submit(task): index for index, task in tasks.items()}
        for future in as_completed(futures):
            index = futures[future]
            try:
                results[index] = future.result()
            except Exception as e:
                raise StatsError(f"{describe_task} {index} failed: {str(e)}") from e
    return results


def monte_carlo_risk(
    setting: TheorySetting,
    scheme: PenaltyScheme,
    solver_config: Optional[SolverConfig] = None,
    replications: int = 200,
    seed: int = 0,
    jobs: Optional[int] = None,
) -> RiskEstimate:
    """
    Expected risk of the functional solver by simulation.

    Every replication samples N_e points per domain from the setting's
    densities, adds fresh Gaussian noise with the setting's σ_e(x), runs
    :func:`~lipirm.solver.minimize` and integrates (f̂ − f*)² on the
    setting's grid.

    Raises
    ------
    StatsError
        If fewer than two replications are requested, or a replication's
        solve fails (the replication index is named).
    """
    if replications < 2:
        raise StatsError(f"monte_carlo_risk needs at least 2 replications, got {replications}")
    jobs = get_config().jobs if jobs is None else jobs
    solver_config = solver_config or SolverConfig()
    grid = setting.grid

    def replicate(index: int) -> float:
        data = draw_from_setting(setting, make_rng(seed, "noise", index))
        try:
            estimate = minimize(data, scheme, solver_config)
        except SolverError as e:
            raise StatsError(f"replication {index}: {str(e)}") from e
        return grid.integrate((estimate(grid.points) - setting.f_star) ** 2)

    tasks = {i: (lambda i=i: replicate(i)) for i in range(replications)}
    results = _run_pool(tasks, jobs, "replication")
    values = np.array([results[i] for i in range(replications)])
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / np.sqrt(replications))
    logger.info(f"Monte-Carlo risk over {replications} replications: {mean:.6g} ± {se:.2g}")
    return RiskEstimate(mean=mean, se=se, replications=replications, values=values.tolist())


def _apply_point(base: PenaltyScheme, point: Mapping[str, float]) -> PenaltyScheme:
    """Scheme with parameters ``lambda``, ``eta:<domain>`` and ``rho:<group>`` replaced."""
    lam = base.lambda_
    eta = dict(base.eta)
    rho = dict(base.rho)
    for name, value in point.items():
        if name == "lambda":
            lam = value
        elif name.startswith("eta:"):
            eta[int(name[4:])] = value
        elif name.startswith("rho:"):
            rho[int(name[4:])] = value
        else:
            raise StatsError(f"Unknown grid parameter '{name}'; use lambda, eta:<domain> or rho:<group>")
    return PenaltyScheme(lambda_=lam, eta=eta, rho=rho, rho_default=base.rho_default)


@dataclass
class GridSearchResult:
    """Argmin of an exhaustive penalty grid plus every evaluated cell."""

    best: Dict[str, float]
    value: float
    table: List[Dict[str, float]]

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = list(self.table[0].keys()) if self.table else ["value"]
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=names)
            writer.writeheader()
            writer.writerows(self.table)
        return path


def grid_search_penalties(
    setting: TheorySetting,
    base: PenaltyScheme,
    grids: Mapping[str, Sequence[float]],
    objective: str = "theorem1",
    solver_config: Optional[SolverConfig] = None,
    replications: int = 20,
    seed: int = 0,
    jobs: Optional[int] = None,
) -> GridSearchResult:
    """
    Exhaustive search of penalty parameters.

    Parameters
    ----------
    setting : TheorySetting
        Problem to evaluate on.
    base : PenaltyScheme
        Values of the parameters that are not searched.
    grids : mapping
        Parameter name (``lambda``, ``eta:<domain>``, ``rho:<group>``) to
        candidate values.
    objective : {"theorem1", "monte_carlo"}
        Closed-form risk or simulated risk of the functional solver.

    Returns
    -------
    GridSearchResult
        The minimizing point (ties go to the smaller values, compared in
        the order of ``grids``) and the full table of evaluations.
    """
    if not grids or any(len(values) == 0 for values in grids.values()):
        raise StatsError("grid_search_penalties needs non-empty grids")
    if objective not in ("theorem1", "monte_carlo"):
        raise StatsError(f"Unknown objective '{objective}'")
    jobs = get_config().jobs if jobs is None else jobs
    names = list(grids)
    points = [dict(zip(names, combo)) for combo in itertools.product(*(sorted(grids[n]) for n in names))]

    def evaluate(point: Dict[str, float]) -> float:
        scheme = _apply_point(base, point)
        if objective == "theorem1":
            return theorem1_risk(setting, scheme).risk
        return monte_carlo_risk(setting, scheme, solver_config, replications, seed, jobs=1).mean

    tasks = {i: (lambda p=p: evaluate(p)) for i, p in enumerate(points)}
    results = _run_pool(tasks, jobs, "grid cell")
    table = []
    best_index = 0
    for i, point in enumerate(points):
        table.append({**point, "value": results[i]})
        if results[i] < results[best_index]:
            best_index = i
    logger.info(f"Grid search over {len(points)} cells finished: best value {results[best_index]:.6g}")
    return GridSearchResult(best=dict(points[best_index]), value=results[best_index], table=table)
