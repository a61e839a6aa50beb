"""
Tests for the acceptance oracles.

The cheap analytic checks run in the default suite; checks that solve on
fine grids or train networks run only with ``-m slow`` and assert the
shape of their verdicts.
"""

import math

import numpy as np
import pytest

from lipirm import oracles
from lipirm.oracles import (
    CHECKS,
    OracleCheck,
    OracleContext,
    OracleError,
    Verdict,
    benign_config,
    get_check,
    group_fixtures,
    list_checks,
    pairwise_auc,
    run_checks,
)
from lipirm.schemas import OracleConfig
from lipirm.stats import auc
from lipirm.theory import TheoryError

SLOW_ANALYTIC = ["lambda_optimality", "penalty_stationarity", "green_crosscheck", "lemma2_agreement", "lemma1_refinement", "gradient_check"]


class TestRegistry:
    """Test check registration and lookup."""

    def test_known_checks(self):
        """Test that every named check is registered."""
        expected = {
            "theorem1_constant",
            "lambda_optimality",
            "penalty_stationarity",
            "green_crosscheck",
            "lemma2_agreement",
            "lemma1_refinement",
            "theory_simulation",
            "penalty_direction",
            "ablation_ordering",
            "confounded_mse",
            "statistics_oracles",
            "gradient_check",
        }
        assert set(CHECKS) == expected

    def test_slow_filter(self):
        """Test that training and Monte-Carlo checks are flagged slow."""
        fast = {check.name for check in list_checks(include_slow=False)}
        assert "theorem1_constant" in fast
        assert not fast & {"theory_simulation", "penalty_direction", "ablation_ordering", "confounded_mse"}

    def test_unknown_check(self):
        """Test the error for an unknown name."""
        with pytest.raises(OracleError, match="Unknown oracle check 'nope'"):
            get_check("nope")
        with pytest.raises(OracleError):
            run_checks(["nope"])


class TestVerdict:
    """Test verdict rows and the oracle context."""

    def test_rows(self):
        """Test the row and dict forms."""
        verdict = Verdict("demo", False, 0.5, 0.1, "too large")
        assert verdict.to_row() == ["demo", "FAIL", 0.5, 0.1, "too large"]
        assert verdict.to_dict()["status"] == "FAIL"

    def test_context_sizes(self):
        """Test that the quick flag shrinks sizes and seeds."""
        full = OracleContext(OracleConfig(seeds=4))
        quick = OracleContext(OracleConfig(seeds=4, quick=True))
        assert full.size(100, 10) == 100 and quick.size(100, 10) == 10
        assert full.seeds == [0, 1, 2, 3]
        assert quick.seeds == [0, 1]
        assert full.data_seed(1) == quick.data_seed(1)
        assert OracleContext(master_seed=1).data_seed(1) != full.data_seed(1)


class TestFixtures:
    """Test the shared problem fixtures."""

    def test_group_fixtures(self):
        """Test that fixture densities integrate to one per domain."""
        for name, fixture in group_fixtures().items():
            setting = fixture.setting(n_grid=129)
            for e in setting.domains:
                assert setting.grid.integrate(setting.densities[e]) == pytest.approx(1.0, rel=3e-2), name

    def test_disjoint_groups_indicator(self):
        """Test that zero densities mark absent groups."""
        stats = group_fixtures()["disjoint_groups"].stats
        assert stats.indicator[(0, 2)] == 0 and stats.indicator[(1, 3)] == 1

    def test_benign_config(self):
        """Test the single uniform domain."""
        config = benign_config(size=100, truth="cosine")
        assert len(config.domains) == 1
        assert config.domains[0].skew == 0.0
        assert config.offset == 2.0

    def test_pairwise_auc(self):
        """Test the O(n²) reference against the rank formula."""
        rng = np.random.default_rng(3)
        labels = rng.permutation(np.r_[np.ones(10), np.zeros(15)])
        scores = np.round(rng.normal(labels, 1.0), 1)
        assert pairwise_auc(scores, labels) == auc(scores, labels)


class TestRunChecks:
    """Test running checks."""

    def test_analytic_checks_pass(self):
        """Test the closed-form risk and the statistics references."""
        seen = []
        verdicts = run_checks(["theorem1_constant", "statistics_oracles"], on_verdict=seen.append)
        assert [v.name for v in verdicts] == ["theorem1_constant", "statistics_oracles"]
        assert all(v.passed for v in verdicts), [v.detail for v in verdicts]
        assert seen == verdicts
        assert verdicts[1].tables["statistics"]

    def test_config_selects_checks(self):
        """Test that config.checks is used when no names are given."""
        verdicts = run_checks(config=OracleConfig(checks=["theorem1_constant"]))
        assert [v.name for v in verdicts] == ["theorem1_constant"]

    def test_errors_become_failed_verdicts(self, monkeypatch):
        """Test that a domain error inside a check fails only that check."""

        def broken(ctx):
            raise TheoryError("degenerate")

        monkeypatch.setitem(oracles.CHECKS, "broken", OracleCheck("broken", broken, "always fails"))
        verdicts = run_checks(["broken", "theorem1_constant"])
        assert not verdicts[0].passed
        assert verdicts[0].detail == "error: degenerate"
        assert math.isnan(verdicts[0].measured)
        assert verdicts[1].passed

    def test_unexpected_errors_propagate(self, monkeypatch):
        """Test that programming errors are not swallowed."""

        def buggy(ctx):
            raise KeyError("oops")

        monkeypatch.setitem(oracles.CHECKS, "buggy", OracleCheck("buggy", buggy, "raises KeyError"))
        with pytest.raises(KeyError):
            run_checks(["buggy"])


@pytest.mark.slow
class TestSlowChecks:
    """Run the expensive checks at quick size."""

    @pytest.mark.parametrize("name", SLOW_ANALYTIC)
    def test_solver_checks(self, name):
        """Test that the solver-based checks produce complete verdicts."""
        (verdict,) = run_checks([name], OracleConfig(quick=True))
        assert verdict.name == name
        assert math.isfinite(verdict.measured)
        assert verdict.tables

    @pytest.mark.parametrize("name", ["theory_simulation", "penalty_direction", "ablation_ordering", "confounded_mse"])
    def test_training_checks(self, name):
        """Test that the training checks produce verdicts at quick size."""
        (verdict,) = run_checks([name], OracleConfig(quick=True, replications=2, seeds=2), jobs=2)
        assert verdict.name == name
        assert verdict.detail
        assert isinstance(verdict.passed, bool)
