"""
Tests for the trainer.

This module tests the LipIRM loss and its gradient, the optimizers, the
evaluation helpers and end-to-end training of every method family on
small benchmark bundles.
"""

import json
import math

import numpy as np
import pytest

from lipirm.data import DatasetBundle, DomainDataset
from lipirm.network import MlpModel
from lipirm.penalties import PenaltyScheme, optimal_lambda
from lipirm.schemas import METHODS, PenaltyOverrides, RpoConfig
from lipirm.trainer import (
    METHOD_SPECS,
    DomainBatch,
    LossTerms,
    TrainingError,
    _minibatches,
    evaluate_model,
    fd_steps_for,
    fit_model,
    lipirm_loss_and_grad,
    primary_metric,
    rpo_penalties,
    train,
)


def make_batches(task, rng):
    """Two small domains with two features and non-uniform ρ."""
    batches = []
    for e, n in ((0, 9), (1, 6)):
        x = rng.normal(size=(n, 2))
        if task == "classification":
            y = (rng.uniform(size=n) < 0.5).astype(float)
        else:
            y = x[:, 0] - 0.5 * x[:, 1] + rng.normal(0.0, 0.1, n)
        batches.append(DomainBatch(e, x, y, rng.uniform(0.5, 2.0, n)))
    return batches


def numeric_gradient(model, batches, scheme, terms, step=1e-6):
    params = model.get_params()
    out = np.zeros_like(params)
    for i in range(params.size):
        shifted = params.copy()
        shifted[i] += step
        model.set_params(shifted)
        plus, _ = lipirm_loss_and_grad(model, batches, scheme, terms)
        shifted[i] -= 2 * step
        model.set_params(shifted)
        minus, _ = lipirm_loss_and_grad(model, batches, scheme, terms)
        out[i] = (plus - minus) / (2 * step)
    model.set_params(params)
    return out


class TestMethodTable:
    """Test the method registry."""

    def test_every_method_has_a_spec(self):
        """Test that the method names match the schema enumeration."""
        assert set(METHOD_SPECS) == set(METHODS)

    def test_rpo_variants(self):
        """Test which penalties each RPO variant optimizes."""
        assert METHOD_SPECS["rpo"].optimize_eta and METHOD_SPECS["rpo"].optimize_rho
        assert METHOD_SPECS["rpo_lip"].optimize_rho and not METHOD_SPECS["rpo_lip"].optimize_eta
        assert METHOD_SPECS["rpo_pen"].optimize_eta and not METHOD_SPECS["rpo_pen"].optimize_rho
        assert not METHOD_SPECS["erm_lip"].irm

    def test_fd_steps(self):
        """Test steps scaled by the feature spread, unit scale for constant features."""
        data = [DomainDataset(0, np.column_stack([[0.0, 2.0], [5.0, 5.0]]), np.zeros(2))]
        np.testing.assert_allclose(fd_steps_for(data, 1e-3), [1e-3, 1e-3])
        data = [DomainDataset(0, np.column_stack([[0.0, 4.0], [5.0, 5.0]]), np.zeros(2))]
        np.testing.assert_allclose(fd_steps_for(data, 1e-3), [2e-3, 1e-3])


class TestLoss:
    """Test the empirical LipIRM loss."""

    @pytest.mark.parametrize("task", ["regression", "classification"])
    @pytest.mark.parametrize(
        "terms",
        [
            LossTerms(irm=True, regularizer="lip", fd_steps=np.array([1e-2, 2e-2])),
            LossTerms(irm=True, regularizer="l2"),
            LossTerms(irm=False, regularizer="none"),
        ],
        ids=["irm-lip", "irm-l2", "erm"],
    )
    def test_gradient_matches_central_differences(self, task, terms):
        """Test the backpropagated gradient of every term combination."""
        rng = np.random.default_rng(21)
        model = MlpModel.build(2, 4, 1, task, rng)
        for b in model.biases:
            b[:] = rng.normal(0.0, 0.1, b.shape)
        batches = make_batches(task, rng)
        scheme = PenaltyScheme(lambda_=0.3, eta={0: 0.7, 1: 2.0})
        _, analytic = lipirm_loss_and_grad(model, batches, scheme, terms)
        numeric = numeric_gradient(model, batches, scheme, terms)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6)

    def test_linear_model_lipschitz_term(self):
        """Test that a linear model's input gradient is exact: λ mean ρ ‖w‖²."""
        model = MlpModel([2, 1])
        model.weights[0][:] = [[3.0], [4.0]]
        x = np.random.default_rng(0).normal(size=(5, 2))
        batch = DomainBatch(0, x, model.predict(x), np.full(5, 2.0))
        loss, _ = lipirm_loss_and_grad(
            model, [batch], PenaltyScheme(lambda_=0.1), LossTerms(irm=False, regularizer="lip", fd_steps=np.full(2, 1e-3))
        )
        assert loss == pytest.approx(0.1 * 2.0 * 25.0)

    def test_zero_model_erm(self):
        """Test Σ_e mean_e y² for the zero predictor."""
        model = MlpModel([2, 1])
        batches = [
            DomainBatch(0, np.zeros((2, 2)), np.array([1.0, 3.0]), np.ones(2)),
            DomainBatch(1, np.zeros((1, 2)), np.array([2.0]), np.ones(1)),
        ]
        loss, _ = lipirm_loss_and_grad(model, batches, PenaltyScheme(lambda_=1.0), LossTerms(irm=False, regularizer="none"))
        assert loss == pytest.approx(5.0 + 4.0)

    def test_zero_eta_is_erm(self):
        """Test that η_e = 0 contributes no IRM term."""
        rng = np.random.default_rng(2)
        model = MlpModel.build(2, 3, 1, "regression", rng)
        batches = make_batches("regression", rng)
        with_irm, _ = lipirm_loss_and_grad(
            model, batches, PenaltyScheme(lambda_=0.1, eta={0: 0.0, 1: 0.0}), LossTerms(irm=True, regularizer="none")
        )
        without, _ = lipirm_loss_and_grad(model, batches, PenaltyScheme(lambda_=0.1), LossTerms(irm=False, regularizer="none"))
        assert with_irm == pytest.approx(without)

    def test_irm_bracket_value(self):
        """Test η (mean 2 f (f − y))² for a constant prediction."""
        model = MlpModel([1, 1])
        model.biases[0][:] = [2.0]
        batch = DomainBatch(0, np.zeros((2, 1)), np.array([1.0, 1.0]), np.ones(2))
        loss, _ = lipirm_loss_and_grad(
            model, [batch], PenaltyScheme(lambda_=1.0, eta={0: 0.5}), LossTerms(irm=True, regularizer="none")
        )
        assert loss == pytest.approx(1.0 + 0.5 * 4.0**2)

    def test_l2_term(self):
        """Test λ Σ ‖W‖² with biases excluded."""
        model = MlpModel([2, 1])
        model.weights[0][:] = [[1.0], [2.0]]
        model.biases[0][:] = [7.0]
        batch = DomainBatch(0, np.zeros((1, 2)), np.array([7.0]), np.ones(1))
        loss, _ = lipirm_loss_and_grad(model, [batch], PenaltyScheme(lambda_=0.5), LossTerms(irm=False, regularizer="l2"))
        assert loss == pytest.approx(0.5 * 5.0)

    def test_non_finite_term(self):
        """Test that an infinite target is reported with the term name."""
        model = MlpModel([1, 1])
        batch = DomainBatch(0, np.zeros((1, 1)), np.array([np.inf]), np.ones(1))
        with pytest.raises(TrainingError, match="non-finite erm term"):
            lipirm_loss_and_grad(model, [batch], PenaltyScheme(lambda_=1.0), LossTerms(irm=False, regularizer="none"))


class TestOptimization:
    """Test the training loop."""

    @pytest.fixture
    def linear_batch(self):
        x = np.linspace(0.0, 1.0, 20).reshape(-1, 1)
        return [DomainBatch(0, x, 2.0 * x[:, 0] + 1.0, np.ones(20))]

    def test_gradient_descent_decreases(self, linear_batch):
        """Test a monotone trace for a convex problem with a small step."""
        model = MlpModel([1, 1])
        config = RpoConfig(epochs=25, learning_rate=0.1, log_every=5)
        trace = fit_model(
            model, linear_batch, PenaltyScheme(lambda_=1.0), LossTerms(irm=False, regularizer="none"),
            config, np.random.default_rng(0),
        )
        assert len(trace) == 25
        assert all(b < a for a, b in zip(trace, trace[1:]))

    def test_adam_reduces_loss(self, linear_batch):
        """Test that Adam ends below its starting loss."""
        model = MlpModel([1, 1])
        config = RpoConfig(epochs=50, learning_rate=0.05, optimizer="adam", log_every=10)
        trace = fit_model(
            model, linear_batch, PenaltyScheme(lambda_=1.0), LossTerms(irm=False, regularizer="none"),
            config, np.random.default_rng(0),
        )
        assert trace[-1] < 0.5 * trace[0]

    def test_minibatches_cover_every_domain(self):
        """Test that each step holds a slice of every domain."""
        batches = [
            DomainBatch(0, np.zeros((10, 1)), np.arange(10.0), np.ones(10)),
            DomainBatch(1, np.zeros((3, 1)), np.arange(3.0), np.ones(3)),
        ]
        steps = _minibatches(batches, 4, np.random.default_rng(1))
        assert len(steps) == 3
        for step in steps:
            assert [b.domain_id for b in step] == [0, 1]
            assert step[0].n == 4 and step[1].n == 3
        seen = np.concatenate([step[0].y for step in steps])
        assert set(seen) == set(range(10))

    def test_full_batch(self):
        """Test that no batch size means one step per epoch."""
        batches = [DomainBatch(0, np.zeros((5, 1)), np.zeros(5), np.ones(5))]
        assert len(_minibatches(batches, None, np.random.default_rng(0))) == 1


class TestEvaluation:
    """Test metrics of trained models."""

    def test_classification_keys(self, two_bit_bundle):
        """Test accuracy and AUC for every split."""
        model = MlpModel.build(2, 3, 1, "classification", np.random.default_rng(0))
        metrics = evaluate_model(model, two_bit_bundle)
        for split in ("train", "validation", "test"):
            assert 0.0 <= metrics[f"{split}_acc"] <= 1.0
            assert f"{split}_auc" in metrics

    def test_single_class_auc_is_nan(self):
        """Test that a one-class split has an undefined AUC."""
        bundle = DatasetBundle(
            train=[DomainDataset(0, np.zeros((3, 1)), np.ones(3), task="classification")], task="classification"
        )
        metrics = evaluate_model(MlpModel([1, 1], task="classification"), bundle)
        assert metrics["train_acc"] == 1.0
        assert math.isnan(metrics["train_auc"])

    def test_primary_metric_fallback(self):
        """Test test, then validation, then train."""
        assert primary_metric({"test_mse": 1.0, "train_mse": 2.0}, "regression") == ("test_mse", 1.0)
        assert primary_metric({"validation_acc": 0.7, "train_acc": 0.9}, "classification") == ("validation_acc", 0.7)
        with pytest.raises(TrainingError):
            primary_metric({}, "regression")


class TestTrain:
    """Test end-to-end training."""

    def test_baseline(self, confounded_bundle, fast_rpo):
        """Test a single-phase regression baseline."""
        run = train("erm_l2", confounded_bundle, fast_rpo, seed=0)
        assert math.isfinite(run.metrics["test_mse"])
        assert run.scheme.eta == {}
        assert set(run.seeds) == {"final"}
        assert run.phase1_scheme is None and run.statistics is None
        assert run.setting == "confounded"
        assert len(run.loss_trace) == fast_rpo.epochs
        json.dumps(run.to_dict())

    def test_uniform_penalty_overrides(self, confounded_bundle, fast_rpo):
        """Test that explicit λ, η and ρ reach the uniform scheme."""
        run = train("irm_lip", confounded_bundle, fast_rpo, penalties=PenaltyOverrides(lambda_=0.02, eta=3.0, rho=0.5))
        assert run.scheme.lambda_ == 0.02
        assert set(run.scheme.eta.values()) == {3.0}
        assert run.scheme.rho_default == 0.5

    def test_rpo(self, two_bit_bundle, fast_rpo):
        """Test both phases of RPO on the two-bit benchmark."""
        run = train("rpo", two_bit_bundle, fast_rpo, seed=1)
        sizes = {d.domain_id: d.n for d in two_bit_bundle.train}
        assert run.phase1_scheme is not None
        assert run.statistics is not None
        assert set(run.scheme.eta) == set(sizes)
        assert run.scheme.lambda_ == pytest.approx(optimal_lambda(sizes))
        assert all(v >= fast_rpo.rho_floor for v in run.scheme.rho.values())
        assert set(run.seeds) == {"final", "auxiliary"}
        assert "test_acc" in run.metrics
        json.dumps(run.to_dict())

    def test_rpo_variants(self, two_bit_bundle, fast_rpo):
        """Test that rpo_lip keeps η uniform and rpo_pen keeps ρ uniform."""
        lip, _, _ = rpo_penalties(two_bit_bundle, fast_rpo, method="rpo_lip")
        assert set(lip.eta.values()) == {1.0}
        assert lip.rho
        pen, _, _ = rpo_penalties(two_bit_bundle, fast_rpo, method="rpo_pen")
        assert pen.rho == {}
        assert set(pen.eta) == {d.domain_id for d in two_bit_bundle.train}

    def test_rpo_rho_indexes_groups(self, two_bit_bundle, fast_rpo):
        """Test that ρ is keyed by the groups of the returned grouping."""
        scheme, grouping, stats = rpo_penalties(two_bit_bundle, fast_rpo)
        assert set(scheme.rho) <= set(range(grouping.k_count))
        assert stats.k_count == grouping.k_count

    def test_frozen_phase_two(self, two_bit_bundle):
        """Test that frozen penalties skip the statistics."""
        config = RpoConfig(hidden=4, depth=1, epochs=5, freeze_phase2_penalties=True)
        scheme, _, stats = rpo_penalties(two_bit_bundle, config)
        assert stats is None
        assert set(scheme.eta.values()) == {1.0}

    def test_deterministic(self, confounded_bundle, fast_rpo):
        """Test identical results for the same seed."""
        a = train("irm_lip", confounded_bundle, fast_rpo, seed=2, master_seed=9)
        b = train("irm_lip", confounded_bundle, fast_rpo, seed=2, master_seed=9)
        assert a.metrics == b.metrics
        assert a.loss_trace == b.loss_trace

    def test_methods_share_final_seed(self, confounded_bundle, fast_rpo):
        """Test that the final-stage seed does not depend on the method."""
        a = train("erm_l2", confounded_bundle, fast_rpo, seed=4)
        b = train("erm_lip", confounded_bundle, fast_rpo, seed=4)
        c = train("erm_lip", confounded_bundle, fast_rpo, seed=5)
        assert a.seeds["final"] == b.seeds["final"] != c.seeds["final"]

    def test_unknown_method(self, confounded_bundle):
        """Test that method names are checked."""
        with pytest.raises(TrainingError, match="Unknown method"):
            train("dro", confounded_bundle)

    def test_rpo_penalties_needs_two_phases(self, confounded_bundle, fast_rpo):
        """Test that baselines have no phase-2 penalties."""
        with pytest.raises(TrainingError, match="not a two-phase method"):
            rpo_penalties(confounded_bundle, fast_rpo, method="irm_lip")

    def test_grouping_failure_phase(self, confounded_bundle):
        """Test that label grouping of continuous targets fails in the statistics phase."""
        config = RpoConfig(hidden=4, depth=1, epochs=2, grouping_mode="label")
        with pytest.raises(TrainingError, match="grouping failed") as excinfo:
            rpo_penalties(confounded_bundle, config)
        assert excinfo.value.phase == "statistics"

    def test_bin_grouping_on_regression(self, confounded_bundle, fast_rpo):
        """Test RPO with feature-bin groups when no group ids are provided."""
        config = fast_rpo.model_copy(update={"grouping_mode": "bins", "k_per_domain": 3})
        scheme, grouping, _ = rpo_penalties(confounded_bundle, config)
        assert grouping.k_count == 3 * len(confounded_bundle.train)
        assert scheme.rho

    def test_invalid_labels(self):
        """Test that classification labels must be 0/1."""
        bundle = DatasetBundle(
            train=[DomainDataset(0, np.zeros((4, 1)), np.array([0.0, 1.0, 2.0, 1.0]), task="classification")],
            task="classification",
        )
        with pytest.raises(TrainingError, match="0/1"):
            train("erm_l2", bundle)

    def test_no_training_domains(self):
        """Test that a bundle needs training data."""
        with pytest.raises(TrainingError, match="at least one training domain"):
            train("erm_l2", DatasetBundle(train=[]))
