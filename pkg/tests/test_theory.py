"""
Tests for the theory engine.

This module tests theory settings, the closed-form risk and the quantities
derived from it (companion λ and the stationary η and ρ).
"""

import json

import numpy as np
import pytest

from lipirm.benchmarks.regression_1d import gen_regression_1d, theory_setting
from lipirm.data import GroupStatistics
from lipirm.grid import Grid1D
from lipirm.penalties import ExactPenaltyInputs, PenaltyScheme
from lipirm.schemas import Domain1DSpec, Regression1DConfig
from lipirm.theory import (
    TheoryError,
    TheorySetting,
    companion_lambda,
    compute_ae,
    conditional_optimal_eta,
    conditional_optimal_rho,
    piecewise_setting,
    theorem1_risk,
)


def constant_setting(n_grid=9):
    """Uniform density, σ = 0.1, f* ≡ 1 and N = 100."""
    return TheorySetting.from_profiles(Grid1D(n_grid), {0: 1.0}, {0: 0.1}, lambda x: 1 + 0 * x, {0: 100})


@pytest.fixture
def quadratic_setting():
    """Two domains on a shifted quadratic truth, the second skewed towards 0."""
    return TheorySetting.from_profiles(
        Grid1D(129),
        densities={0: 1.0, 1: lambda x: 2 * (1 - x) + 0.1},
        noise_sd={0: 0.1, 1: 0.3},
        truth=lambda x: x**2 + 1.0,
        domain_sizes={0: 500, 1: 300},
        truth_d1=lambda x: 2 * x,
        truth_d2=lambda x: 2.0 + 0 * x,
    )


@pytest.fixture
def grouped_setting():
    """Piecewise setting with three groups over two domains."""
    sizes = {0: 400, 1: 400}
    cells = {(0, 0): (0.5, 0.04), (0, 1): (0.5, 0.09), (1, 1): (0.3, 0.25), (1, 2): (0.7, 0.01)}
    r_hat, counts, indicator, sigma2 = {}, {}, {}, {}
    for e in sizes:
        for k in range(3):
            r, s2 = cells.get((e, k), (0.0, 0.0))
            r_hat[(e, k)], sigma2[(e, k)] = r, s2
            counts[(e, k)] = int(r * sizes[e])
            indicator[(e, k)] = int((e, k) in cells)
    stats = GroupStatistics(
        r_hat=r_hat, counts=counts, indicator=indicator, domain_sizes=sizes, k_count=3, sigma2=sigma2
    )
    extra = ExactPenaltyInputs(f_value={0: 1.0, 1: 2.0, 2: 1.5}, f_second={0: 3.0, 1: -2.0, 2: 1.0})
    return piecewise_setting(Grid1D(97), stats, extra)


class TestTheorySetting:
    """Test construction and validation of settings."""

    def test_total_density(self, quadratic_setting):
        """Test r = Σ_e r_e."""
        np.testing.assert_allclose(quadratic_setting.r, 1.0 + 2 * (1 - quadratic_setting.grid.points) + 0.1)
        assert quadratic_setting.domains == [0, 1]

    def test_empirical_defaults_to_true_density(self, quadratic_setting):
        """Test that r̂_e falls back to r_e."""
        np.testing.assert_array_equal(quadratic_setting.r_hat[1], quadratic_setting.densities[1])

    def test_finite_difference_derivatives(self):
        """Test that missing derivatives are approximated."""
        setting = TheorySetting.from_profiles(Grid1D(65), {0: 1.0}, {0: 0.1}, lambda x: x**3, {0: 10})
        np.testing.assert_allclose(setting.df_star, 3 * setting.grid.points**2, atol=1e-3)
        np.testing.assert_allclose(setting.d2f_star, 6 * setting.grid.points, atol=1e-6)

    def test_zero_total_density(self):
        """Test that r must be positive everywhere."""
        with pytest.raises(TheoryError, match="total density"):
            TheorySetting.from_profiles(Grid1D(9), {0: lambda x: 1 - x}, {0: 0.1}, lambda x: x, {0: 10})

    def test_negative_noise(self):
        """Test that σ must be non-negative."""
        with pytest.raises(TheoryError, match="non-negative"):
            TheorySetting.from_profiles(Grid1D(9), {0: 1.0}, {0: -0.1}, lambda x: x, {0: 10})

    def test_missing_sample_size(self):
        """Test that every domain needs N_e."""
        with pytest.raises(TheoryError, match="sample size"):
            TheorySetting.from_profiles(Grid1D(9), {0: 1.0, 1: 1.0}, {0: 0.1, 1: 0.1}, lambda x: x, {0: 10})

    def test_wrong_table_length(self):
        """Test that node tables must match the grid."""
        with pytest.raises(TheoryError, match="expected 9 node values"):
            TheorySetting.from_profiles(Grid1D(9), {0: np.ones((2, 9))}, {0: 0.1}, lambda x: x, {0: 10})

    def test_rho_nodes_override(self, quadratic_setting):
        """Test ρ(x) given on the nodes, with its derivative in the flux."""
        x = quadratic_setting.grid.points
        scheme = PenaltyScheme(lambda_=0.1, rho={0: 5.0})
        rho = quadratic_setting.rho_field(scheme, rho_nodes=1 + x)
        np.testing.assert_allclose(quadratic_setting.flux_prime(rho), 2 * (1 + x) + 2 * x, atol=1e-9)

    def test_rho_from_node_groups(self, grouped_setting):
        """Test the piecewise-constant ρ over node groups."""
        scheme = PenaltyScheme(lambda_=0.1, rho={0: 1.0, 1: 2.0, 2: 3.0})
        values = grouped_setting.rho_field(scheme).values
        assert set(np.unique(values)) == {1.0, 2.0, 3.0}
        assert values[0] == 1.0 and values[-1] == 3.0


class TestPiecewiseSetting:
    """Test settings built from group statistics."""

    def test_group_values_on_nodes(self, grouped_setting):
        """Test r̂, σ, f and f'' inside each group."""
        groups = grouped_setting.node_groups
        middle = groups == 1
        np.testing.assert_allclose(grouped_setting.densities[0][middle], 0.5)
        np.testing.assert_allclose(grouped_setting.densities[1][middle], 0.3)
        np.testing.assert_allclose(grouped_setting.noise_sd[1][middle], 0.5)
        np.testing.assert_allclose(grouped_setting.f_star[middle], 2.0)
        np.testing.assert_allclose(grouped_setting.d2f_star[middle], -2.0)
        np.testing.assert_allclose(grouped_setting.df_star, 0.0)
        np.testing.assert_allclose(grouped_setting.densities[0][groups == 2], 0.0)

    def test_unoccupied_group_rejected(self):
        """Test that a group without domains leaves r = 0."""
        stats = GroupStatistics(
            r_hat={(0, 0): 1.0, (0, 1): 0.0},
            counts={(0, 0): 10, (0, 1): 0},
            indicator={(0, 0): 1, (0, 1): 0},
            domain_sizes={0: 10},
            k_count=2,
            sigma2={(0, 0): 0.1, (0, 1): 0.0},
        )
        with pytest.raises(TheoryError, match="total density"):
            piecewise_setting(Grid1D(9), stats, ExactPenaltyInputs.unit(range(2)))


class TestRisk:
    """Test the closed-form risk."""

    def test_constant_benchmark(self):
        """Test the hand-computed risk λ²/16 + 10^{-4}/√λ at λ = 0.1."""
        report = theorem1_risk(constant_setting(), PenaltyScheme(lambda_=0.1, eta={0: 1.0}, rho={0: 1.0}))
        assert report.risk == pytest.approx(9.412e-4, abs=5e-8)
        assert report.a_e == pytest.approx({0: 0.25})

    def test_compute_ae(self):
        """Test A_e = 1/4 for unit profiles."""
        ones = np.ones(5)
        assert compute_ae(1.0, ones, ones, ones, Grid1D(5)) == pytest.approx(0.25)
        assert compute_ae(2.0, ones, ones, ones, Grid1D(5)) == pytest.approx(0.0625)

    def test_compute_ae_needs_positive_eta(self):
        """Test that A_e is only defined for η_e > 0."""
        ones = np.ones(5)
        with pytest.raises(TheoryError, match="eta_e > 0"):
            compute_ae(0.0, ones, ones, ones, Grid1D(5))

    def test_degenerate_ae(self):
        """Test that a vanishing integral is reported."""
        ones = np.ones(5)
        with pytest.raises(TheoryError, match="degenerate A_e"):
            compute_ae(1.0, ones, ones, np.zeros(5), Grid1D(5))

    def test_zero_eta_has_no_irm_term(self):
        """Test that η_e = 0 leaves only the Lipschitz bias."""
        report = theorem1_risk(constant_setting(), PenaltyScheme(lambda_=0.1, eta={0: 0.0}, rho={0: 1.0}))
        assert report.a_e == {}
        np.testing.assert_allclose(report.bias2, 0.0)

    def test_report_serialization(self, tmp_path):
        """Test the JSON and CSV renderings."""
        report = theorem1_risk(constant_setting(), PenaltyScheme(lambda_=0.1, eta={0: 1.0}))
        data = json.loads(report.to_json())
        assert set(data) == {"lambda", "a_e", "risk", "integrated_bias2", "integrated_variance", "n_grid"}
        assert data["integrated_bias2"] + data["integrated_variance"] == pytest.approx(data["risk"])
        path = report.to_csv(tmp_path / "nodes.csv")
        assert path.read_text().splitlines()[0] == "x,bias2,variance"

    def test_variance_falls_with_sample_size(self):
        """Test that more samples lower the variance."""
        scheme = PenaltyScheme(lambda_=0.1)
        small = constant_setting()
        large = TheorySetting.from_profiles(Grid1D(9), {0: 1.0}, {0: 0.1}, lambda x: 1 + 0 * x, {0: 1000})
        assert theorem1_risk(large, scheme).risk < theorem1_risk(small, scheme).risk


class TestDerivedOptima:
    """Test the companion λ and the stationary η and ρ."""

    def test_companion_lambda_minimizes(self, quadratic_setting):
        """Test that the companion λ beats nearby values."""
        scheme = PenaltyScheme(lambda_=0.1, eta={0: 1.0, 1: 1.0})
        lam = companion_lambda(quadratic_setting, scheme)
        risk = lambda v: theorem1_risk(quadratic_setting, scheme.model_copy(update={"lambda_": v})).risk  # noqa: E731
        assert risk(lam) < risk(0.9 * lam)
        assert risk(lam) < risk(1.1 * lam)

    def test_companion_lambda_undefined_without_bias(self):
        """Test the degenerate case of a bias-free setting."""
        with pytest.raises(TheoryError, match="companion lambda undefined"):
            companion_lambda(constant_setting(), PenaltyScheme(lambda_=0.1))

    def test_conditional_eta_is_stationary(self, quadratic_setting):
        """Test that perturbing each η_e raises the risk."""
        scheme = PenaltyScheme(lambda_=0.05, eta={0: 1.0, 1: 1.0})
        eta = conditional_optimal_eta(quadratic_setting, scheme)
        assert all(v > 0 for v in eta.values())
        best = theorem1_risk(quadratic_setting, scheme.model_copy(update={"eta": eta})).risk
        for e in eta:
            for factor in (0.9, 1.1):
                perturbed = dict(eta)
                perturbed[e] *= factor
                value = theorem1_risk(quadratic_setting, scheme.model_copy(update={"eta": perturbed})).risk
                assert value > best

    def test_conditional_rho_is_stationary(self, grouped_setting):
        """Test that perturbing each ρ_k raises the risk."""
        scheme = PenaltyScheme(lambda_=0.05, eta={0: 1.0, 1: 1.0}, rho={0: 1.0, 1: 1.0, 2: 1.0})
        rho = conditional_optimal_rho(grouped_setting, scheme)
        assert sorted(rho) == [0, 1, 2]
        best = theorem1_risk(grouped_setting, scheme.model_copy(update={"rho": rho})).risk
        for k in rho:
            for factor in (0.95, 1.05):
                perturbed = dict(rho)
                perturbed[k] *= factor
                value = theorem1_risk(grouped_setting, scheme.model_copy(update={"rho": perturbed})).risk
                assert value > best

    def test_conditional_rho_needs_groups(self, quadratic_setting):
        """Test that node groups are required."""
        with pytest.raises(TheoryError, match="needs node groups"):
            conditional_optimal_rho(quadratic_setting, PenaltyScheme(lambda_=0.1))


class TestRegressionSetting:
    """Test the analytic setting of the 1-D regression benchmark."""

    def test_matches_configuration(self):
        """Test densities and sizes from the configuration."""
        config = Regression1DConfig(domains=[Domain1DSpec(size=300), Domain1DSpec(size=100, skew=1.0)])
        setting = theory_setting(config, Grid1D(33))
        np.testing.assert_allclose(setting.densities[1], 2 * (1 - setting.grid.points))
        assert setting.domain_sizes == {0: 300, 1: 100}
        np.testing.assert_allclose(setting.f_star, np.sin(2 * np.pi * setting.grid.points) + 2.0)

    def test_fully_skewed_has_no_setting(self):
        """Test that r(1) = 0 yields no analytic setting."""
        config = Regression1DConfig(domains=[Domain1DSpec(size=50, skew=2.0)])
        train, test, setting = gen_regression_1d(config, Grid1D(33))
        assert setting is None
        assert train[0].n == 50
        assert test == []
