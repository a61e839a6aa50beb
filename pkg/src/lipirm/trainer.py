"""
Trainer
=======

Trains the feed-forward network under the empirical LipIRM loss

    Σ_e mean_e ℓ + Σ_e η_e B_e² + λ Σ_e mean_e ρ(x) ‖g(x)‖²

where B_e = ∂_w mean_e ℓ(w f, y)|_{w=1} is the IRM bracket of domain e and
g is the symmetric finite-difference input gradient
g_j(x) = (f(x + h_j e_j) − f(x − h_j e_j)) / (2 h_j). Both perturbed
forward passes are backpropagated, so no second-order differentiation is
needed. ℓ is the squared error for regression and the logistic loss on the
logit for classification.

Methods
-------
``erm_l2``, ``erm_lip``, ``irm_l2``, ``irm_lip``
    Single-phase baselines; ``erm`` drops the IRM term, ``l2`` replaces
    the Lipschitz term by λ Σ ‖W‖².
``rpo``
    Two phases: train with uniform penalties, estimate per-group density
    and noise statistics with that auxiliary model, derive (λ, η_e, ρ_k)
    and retrain from a fresh initialization.
``rpo_lip`` / ``rpo_pen``
    RPO keeping η uniform / keeping ρ uniform.

Seeds
-----
Initialization and batching of a stage use
``derive_seed(master_seed, seed, stage)`` with stages ``"auxiliary"`` (RPO
phase 1) and ``"final"``. The method does not enter the key, so every
method of one seed starts from the same network.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .data import (
    DataError,
    DatasetBundle,
    DomainDataset,
    GroupStatistics,
    Grouping,
    estimate_density,
    estimate_noise_variance,
    group_by_bins,
    group_by_label,
    group_from_provided,
)
from .network import MlpModel, ModelError
from .penalties import PenaltyError, PenaltyScheme, optimal_eta, optimal_lambda, optimal_rho
from .rng import derive_seed
from .schemas import PenaltyOverrides, RpoConfig
from .stats import StatsError, accuracy, auc, mse

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class TrainingError(Exception):
    """Exception raised when training fails; ``phase`` names the RPO phase."""

    def __init__(self, message: str, phase: Optional[str] = None):
        super().__init__(f"[{phase}] {message}" if phase else message)
        self.phase = phase


@dataclass(frozen=True)
class MethodSpec:
    """Which terms a method uses and which penalties RPO optimizes."""

    irm: bool
    regularizer: str
    two_phase: bool = False
    optimize_eta: bool = False
    optimize_rho: bool = False


METHOD_SPECS: Dict[str, MethodSpec] = {
    "erm_l2": MethodSpec(irm=False, regularizer="l2"),
    "erm_lip": MethodSpec(irm=False, regularizer="lip"),
    "irm_l2": MethodSpec(irm=True, regularizer="l2"),
    "irm_lip": MethodSpec(irm=True, regularizer="lip"),
    "rpo": MethodSpec(irm=True, regularizer="lip", two_phase=True, optimize_eta=True, optimize_rho=True),
    "rpo_lip": MethodSpec(irm=True, regularizer="lip", two_phase=True, optimize_rho=True),
    "rpo_pen": MethodSpec(irm=True, regularizer="lip", two_phase=True, optimize_eta=True),
}


@dataclass
class DomainBatch:
    """Samples of one domain with the Lipschitz weight ρ of every sample."""

    domain_id: int
    x: np.ndarray
    y: np.ndarray
    rho: np.ndarray

    @property
    def n(self) -> int:
        return int(self.y.shape[0])


@dataclass
class LossTerms:
    """
    Loss configuration of :func:`lipirm_loss_and_grad`.

    Attributes
    ----------
    irm : bool
        Include the IRM bracket penalty.
    regularizer : {"lip", "l2", "none"}
        Input-gradient penalty, squared weight norm, or nothing.
    fd_steps : numpy.ndarray, optional
        Finite-difference step h_j per feature (``"lip"`` only).
    """

    irm: bool = True
    regularizer: str = "lip"
    fd_steps: Optional[np.ndarray] = None


def fd_steps_for(data: Sequence[DomainDataset], fd_step: float) -> np.ndarray:
    """h_j = fd_step × std of feature j over the pooled data (1 for constant features)."""
    pooled = np.vstack([d.x for d in data])
    scale = np.std(pooled, axis=0)
    return fd_step * np.where(scale > 0, scale, 1.0)


def _pointwise(task: str, f: np.ndarray, y: np.ndarray) -> Tuple[float, float, np.ndarray, np.ndarray]:
    """Mean loss, IRM bracket, and their derivatives with respect to each output."""
    n = y.size
    if task == "classification":
        p = expit(f)
        loss = float(np.mean(np.logaddexp(0.0, f) - y * f))
        d_loss = (p - y) / n
        bracket = float(np.mean((p - y) * f))
        d_bracket = (p * (1.0 - p) * f + p - y) / n
    else:
        residual = f - y
        loss = float(np.mean(residual**2))
        d_loss = 2.0 * residual / n
        bracket = float(np.mean(2.0 * f * residual))
        d_bracket = (4.0 * f - 2.0 * y) / n
    return loss, bracket, d_loss, d_bracket


def _check_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite {name} term ({value})")


def lipirm_loss_and_grad(
    model: MlpModel,
    batches: Sequence[DomainBatch],
    scheme: PenaltyScheme,
    terms: Optional[LossTerms] = None,
) -> Tuple[float, np.ndarray]:
    """
    Empirical LipIRM loss and its gradient in the model parameters.

    Parameters
    ----------
    model : MlpModel
        Network; its output is the prediction (regression) or logit.
    batches : sequence of DomainBatch
        One batch per domain with per-sample ρ.
    scheme : PenaltyScheme
        λ and η_e (ρ is already resolved per sample).
    terms : LossTerms, optional
        Which penalty terms to include.

    Returns
    -------
    loss : float
    grad : numpy.ndarray
        Flat gradient in the order of :meth:`MlpModel.get_params`.

    Raises
    ------
    TrainingError
        If a term evaluates to a non-finite value; the term is named.
    """
    terms = terms or LossTerms()
    grad = np.zeros(model.n_params)
    erm_total, irm_total, lip_total = 0.0, 0.0, 0.0

    for batch in batches:
        f, cache = model.forward(batch.x)
        loss, bracket, d_loss, d_bracket = _pointwise(model.task, f, batch.y)
        d_out = d_loss
        erm_total += loss
        eta = scheme.eta_of(batch.domain_id) if terms.irm else 0.0
        if eta > 0:
            irm_total += eta * bracket**2
            d_out = d_out + 2.0 * eta * bracket * d_bracket
        grad += MlpModel.flatten(model.backward(cache, d_out))

        if terms.regularizer == "lip" and scheme.lambda_ > 0:
            h = terms.fd_steps if terms.fd_steps is not None else np.full(model.d, 1e-3)
            n, d = batch.x.shape
            shifts = np.zeros((d, 1, d))
            shifts[np.arange(d), 0, np.arange(d)] = h
            plus = (batch.x[None, :, :] + shifts).reshape(d * n, d)
            minus = (batch.x[None, :, :] - shifts).reshape(d * n, d)
            out, lip_cache = model.forward(np.vstack([plus, minus]))
            g = (out[: d * n] - out[d * n :]).reshape(d, n) / (2.0 * h[:, None])
            lip_total += scheme.lambda_ * float(np.sum(batch.rho[None, :] * g**2)) / n
            upstream = (scheme.lambda_ * batch.rho[None, :] * g / (n * h[:, None])).reshape(-1)
            grad += MlpModel.flatten(model.backward(lip_cache, np.concatenate([upstream, -upstream])))

    l2_total = 0.0
    if terms.regularizer == "l2":
        l2_total = scheme.lambda_ * model.weight_norm2()
        offset = 0
        for w, b in zip(model.weights, model.biases):
            grad[offset : offset + w.size] += 2.0 * scheme.lambda_ * w.ravel()
            offset += w.size + b.size

    for name, value in (("erm", erm_total), ("irm", irm_total), ("lipschitz", lip_total), ("l2", l2_total)):
        _check_finite(name, value)
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient")
    return erm_total + irm_total + lip_total + l2_total, grad


class _Adam:
    def __init__(self, n: int, lr: float):
        self.lr = lr
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        b1, b2 = ADAM_BETAS
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad**2
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def _minibatches(batches: Sequence[DomainBatch], size: Optional[int], rng: np.random.Generator) -> List[List[DomainBatch]]:
    """Stratified mini-batches: every step sees every domain."""
    if size is None:
        return [list(batches)]
    steps = max(math.ceil(b.n / size) for b in batches)
    orders = [rng.permutation(b.n) for b in batches]
    out = []
    for s in range(steps):
        step = []
        for b, order in zip(batches, orders):
            start = (s * size) % b.n
            idx = order[np.arange(start, start + min(size, b.n)) % b.n]
            step.append(DomainBatch(b.domain_id, b.x[idx], b.y[idx], b.rho[idx]))
        out.append(step)
    return out


def fit_model(
    model: MlpModel,
    batches: Sequence[DomainBatch],
    scheme: PenaltyScheme,
    terms: LossTerms,
    config: RpoConfig,
    rng: np.random.Generator,
) -> List[float]:
    """
    Optimize ``model`` in place and return the per-epoch loss trace.

    With full batches the trace entry of an epoch is the loss before its
    update; with mini-batches it is the mean over the epoch's steps.
    """
    params = model.get_params()
    adam = _Adam(params.size, config.learning_rate) if config.optimizer == "adam" else None
    trace = []
    for epoch in range(config.epochs):
        losses = []
        for step in _minibatches(batches, config.batch_size, rng):
            loss, grad = lipirm_loss_and_grad(model, step, scheme, terms)
            losses.append(loss)
            params = adam.step(params, grad) if adam else params - config.learning_rate * grad
            model.set_params(params)
        trace.append(float(np.mean(losses)))
        if (epoch + 1) % config.log_every == 0 or epoch == 0:
            logger.debug(f"Epoch {epoch + 1}/{config.epochs}: loss={trace[-1]:.6g}")
    return trace


def _group(data: Sequence[DomainDataset], config: RpoConfig) -> Grouping:
    if config.grouping_mode == "bins":
        return group_by_bins(data, config.feature_index, config.k_per_domain)
    if config.grouping_mode == "label":
        return group_by_label(data, "label")
    return group_from_provided(data)


def _batches(data: Sequence[DomainDataset], scheme: PenaltyScheme, grouping: Optional[Grouping]) -> List[DomainBatch]:
    out = []
    for d in data:
        groups = grouping.assignment[d.domain_id] if grouping is not None else np.zeros(d.n, dtype=int)
        out.append(DomainBatch(d.domain_id, d.x, d.y, scheme.rho_of(groups)))
    return out


def evaluate_model(model: MlpModel, bundle: DatasetBundle) -> Dict[str, float]:
    """
    Metrics on every non-empty split, pooled over the split's domains.

    Regression reports ``<split>_mse``; classification ``<split>_acc`` and
    ``<split>_auc`` (AUC is NaN when a split holds a single class).
    """
    metrics: Dict[str, float] = {}
    for split, domains in bundle.splits().items():
        y = np.concatenate([d.y for d in domains])
        pred = np.concatenate([model.predict_target(d.x) for d in domains])
        if bundle.task == "classification":
            metrics[f"{split}_acc"] = accuracy(pred, y)
            try:
                metrics[f"{split}_auc"] = auc(pred, y)
            except StatsError:
                metrics[f"{split}_auc"] = float("nan")
        else:
            metrics[f"{split}_mse"] = mse(pred, y)
    return metrics


def primary_metric(metrics: Dict[str, float], task: str) -> Tuple[str, float]:
    """The headline metric: test MSE or accuracy, falling back to validation then train."""
    suffix = "acc" if task == "classification" else "mse"
    for split in ("test", "validation", "train"):
        key = f"{split}_{suffix}"
        if key in metrics:
            return key, metrics[key]
    raise TrainingError("no metrics were computed")


@dataclass
class ExperimentRun:
    """Outcome of training one method on one seed."""

    method: str
    seed: int
    metrics: Dict[str, float]
    scheme: PenaltyScheme
    loss_trace: List[float]
    wall_clock: float
    setting: str = ""
    phase1_scheme: Optional[PenaltyScheme] = None
    statistics: Optional[GroupStatistics] = None
    seeds: Dict[str, int] = field(default_factory=dict)
    model: Optional[MlpModel] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, object]:
        return {
            "method": self.method,
            "seed": self.seed,
            "setting": self.setting,
            "metrics": self.metrics,
            "scheme": self.scheme.model_dump(by_alias=True, mode="json"),
            "phase1_scheme": self.phase1_scheme.model_dump(by_alias=True, mode="json") if self.phase1_scheme else None,
            "statistics": self.statistics.to_dict() if self.statistics else None,
            "seeds": self.seeds,
            "loss_trace": self.loss_trace,
            "wall_clock": self.wall_clock,
        }


def _check_bundle(bundle: DatasetBundle) -> None:
    if not bundle.train:
        raise TrainingError("at least one training domain is required")
    if bundle.task == "classification":
        for d in bundle.train + bundle.validation + bundle.test:
            if not np.all(np.isin(d.y, (0.0, 1.0))):
                raise TrainingError(f"classification labels must be 0/1 (domain {d.domain_id})")


def _uniform_lambda(sizes: Dict[int, int], config: RpoConfig, penalties: PenaltyOverrides) -> float:
    if penalties.lambda_ is not None:
        return penalties.lambda_
    return optimal_lambda(sizes) if config.lambda_mode == "prop1" else config.fixed_lambda


def _stage(
    bundle: DatasetBundle,
    scheme: PenaltyScheme,
    grouping: Optional[Grouping],
    config: RpoConfig,
    stage_seed: int,
    terms: LossTerms,
) -> Tuple[MlpModel, List[float]]:
    rng = np.random.default_rng(stage_seed)
    model = MlpModel.build(bundle.train[0].d, config.hidden, config.depth, bundle.task, rng)
    trace = fit_model(model, _batches(bundle.train, scheme, grouping), scheme, terms, config, rng)
    return model, trace


def optimized_scheme(
    spec: MethodSpec,
    data: Sequence[DomainDataset],
    grouping: Grouping,
    auxiliary: MlpModel,
    uniform: PenaltyScheme,
    config: RpoConfig,
) -> Tuple[PenaltyScheme, GroupStatistics]:
    """
    Phase-2 penalties from the statistics of an auxiliary model.

    Raises
    ------
    TrainingError
        With phase ``"statistics"`` when grouping, statistics or the
        penalty formulas fail.
    """
    try:
        stats = estimate_noise_variance(data, grouping, auxiliary.predict_target, estimate_density(data, grouping))
        sizes = {d.domain_id: d.n for d in data}
        lam = optimal_lambda(sizes) if config.lambda_mode == "prop1" else config.fixed_lambda
        eta = optimal_eta(stats, sizes, eta_cap=config.eta_cap) if spec.optimize_eta else dict(uniform.eta)
        rho = optimal_rho(stats, rho_floor=config.rho_floor) if spec.optimize_rho else {}
    except (DataError, PenaltyError) as e:
        raise TrainingError(str(e), phase="statistics") from e
    scheme = PenaltyScheme(lambda_=lam, eta=eta, rho=rho, rho_default=uniform.rho_default)
    return scheme, stats


@dataclass
class _Setup:
    spec: MethodSpec
    uniform: PenaltyScheme
    terms: LossTerms
    seeds: Dict[str, int]


def _setup(
    method: str, bundle: DatasetBundle, config: RpoConfig, seed: int, master_seed: int, penalties: PenaltyOverrides
) -> _Setup:
    if method not in METHOD_SPECS:
        raise TrainingError(f"Unknown method '{method}'; expected one of {list(METHOD_SPECS)}")
    spec = METHOD_SPECS[method]
    _check_bundle(bundle)
    sizes = {d.domain_id: d.n for d in bundle.train}
    eta = {e: penalties.eta for e in sizes} if spec.irm else {}
    try:
        uniform = PenaltyScheme(lambda_=_uniform_lambda(sizes, config, penalties), eta=eta, rho_default=penalties.rho)
    except (ValueError, PenaltyError) as e:
        raise TrainingError(f"invalid uniform penalties: {str(e)}", phase="setup") from e
    terms = LossTerms(irm=spec.irm, regularizer=spec.regularizer, fd_steps=fd_steps_for(bundle.train, config.fd_step))
    seeds = {"final": derive_seed(master_seed, seed, "final")}
    if spec.two_phase:
        seeds["auxiliary"] = derive_seed(master_seed, seed, "auxiliary")
    return _Setup(spec=spec, uniform=uniform, terms=terms, seeds=seeds)


def _phase_one(
    setup: _Setup, bundle: DatasetBundle, config: RpoConfig, label: str
) -> Tuple[PenaltyScheme, Grouping, Optional[GroupStatistics]]:
    logger.info(f"{label}: phase 1 (auxiliary model, uniform penalties)")
    try:
        auxiliary, _ = _stage(bundle, setup.uniform, None, config, setup.seeds["auxiliary"], setup.terms)
    except (ModelError, DataError) as e:
        raise TrainingError(str(e), phase="auxiliary") from e
    except TrainingError as e:
        if e.phase is None:
            raise TrainingError(str(e), phase="auxiliary") from e
        raise
    try:
        grouping = _group(bundle.train, config)
    except DataError as e:
        raise TrainingError(f"grouping failed: {str(e)}", phase="statistics") from e
    if config.freeze_phase2_penalties:
        return setup.uniform, grouping, None
    scheme, stats = optimized_scheme(setup.spec, bundle.train, grouping, auxiliary, setup.uniform, config)
    return scheme, grouping, stats


def rpo_penalties(
    bundle: DatasetBundle,
    config: Optional[RpoConfig] = None,
    seed: int = 0,
    master_seed: int = 0,
    penalties: Optional[PenaltyOverrides] = None,
    method: str = "rpo",
) -> Tuple[PenaltyScheme, Grouping, Optional[GroupStatistics]]:
    """
    Run RPO up to the optimized scheme, without the final retraining.

    Returns
    -------
    scheme : PenaltyScheme
        Phase-2 penalties.
    grouping : Grouping
        Groups of the training samples indexing ``scheme.rho``.
    statistics : GroupStatistics or None
        Density and noise statistics (None when penalties are frozen).
    """
    config = config or RpoConfig()
    setup = _setup(method, bundle, config, seed, master_seed, penalties or PenaltyOverrides())
    if not setup.spec.two_phase:
        raise TrainingError(f"'{method}' is not a two-phase method")
    return _phase_one(setup, bundle, config, f"{method} seed {seed}")


def train(
    method: str,
    bundle: DatasetBundle,
    config: Optional[RpoConfig] = None,
    seed: int = 0,
    master_seed: int = 0,
    penalties: Optional[PenaltyOverrides] = None,
) -> ExperimentRun:
    """
    Train one method on a dataset bundle.

    Parameters
    ----------
    method : str
        One of ``erm_l2, erm_lip, irm_l2, irm_lip, rpo, rpo_lip, rpo_pen``.
    bundle : DatasetBundle
        Training domains plus optional validation and test domains.
    config : RpoConfig, optional
        Model size, optimizer and RPO settings.
    seed, master_seed : int
        Seed index and master seed of the run.
    penalties : PenaltyOverrides, optional
        Uniform λ, η and ρ of the baselines and of RPO phase 1.

    Returns
    -------
    ExperimentRun

    Raises
    ------
    TrainingError
        On invalid data, non-finite losses, or failing statistics; the
        phase (``setup``, ``auxiliary``, ``statistics``, ``final``) is
        recorded.
    """
    config = config or RpoConfig()
    setup = _setup(method, bundle, config, seed, master_seed, penalties or PenaltyOverrides())
    started = time.perf_counter()
    label = f"{method} seed {seed}"

    scheme, grouping, phase1_scheme, stats = setup.uniform, None, None, None
    if setup.spec.two_phase:
        scheme, grouping, stats = _phase_one(setup, bundle, config, label)
        phase1_scheme = setup.uniform
        logger.info(f"{label}: phase 2 with lambda={scheme.lambda_:.4g}")
    try:
        model, trace = _stage(bundle, scheme, grouping, config, setup.seeds["final"], setup.terms)
        metrics = evaluate_model(model, bundle)
    except TrainingError as e:
        if e.phase is None:
            raise TrainingError(str(e), phase="final") from e
        raise
    except (ModelError, DataError, StatsError) as e:
        raise TrainingError(str(e), phase="final") from e

    wall = time.perf_counter() - started
    name, value = primary_metric(metrics, bundle.task)
    logger.info(f"{label}: {name}={value:.4f} ({wall:.1f}s)")
    return ExperimentRun(
        method=method,
        seed=seed,
        metrics=metrics,
        scheme=scheme,
        loss_trace=trace,
        wall_clock=wall,
        setting=str(bundle.metadata.get("benchmark", "")),
        phase1_scheme=phase1_scheme,
        statistics=stats,
        seeds=setup.seeds,
        model=model,
    )
