import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmpstar import (
    BudgetExceededError,
    ContractError,
    Dirac,
    Ensemble,
    Gaussian,
    expectation,
    quadrature_nodes,
    sample,
)
from pmpstar.distribution import WeightedEnsemble


def gaussian_moment(k: int) -> float:
    """E[X^k] for X ~ N(0, 1)."""
    return 0.0 if k % 2 else float(math.prod(range(k - 1, 0, -2)))


class TestQuadrature:
    def test_dirac_single_node(self):
        ens = quadrature_nodes(Dirac([1.0, 2.0]), 5)
        assert ens.size == 1
        np.testing.assert_array_equal(ens.points, [[1.0, 2.0]])
        np.testing.assert_array_equal(ens.weights, [1.0])

    @pytest.mark.parametrize("order", [1, 4, 9])
    def test_dirac_ignores_order(self, order):
        assert quadrature_nodes(Dirac([3.0]), order).size == 1

    def test_standard_normal_order3_moments(self):
        ens = quadrature_nodes(Gaussian([0.0, 0.0], np.eye(2)), 3)
        assert ens.size == 9
        np.testing.assert_allclose(ens.mean(), [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(ens.covariance(), np.eye(2), atol=1e-12)

    def test_shifted_mean_order5(self):
        ens = quadrature_nodes(Gaussian([1.0, 1.0], np.eye(2)), 5)
        np.testing.assert_allclose(ens.mean(), [1.0, 1.0], atol=1e-12)
        assert ens.weights.sum() == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("order", [1, 2, 3, 5, 7, 10])
    def test_monomial_exactness(self, order):
        ens = quadrature_nodes(Gaussian([0.0], [[1.0]]), order)
        for k in range(2 * order):
            got = expectation(ens.points[:, 0] ** k, ens)
            assert got == pytest.approx(gaussian_moment(k), abs=1e-10 * max(1.0, gaussian_moment(k)))

    def test_correlated_covariance_reproduced(self):
        cov = np.array([[2.0, 0.6], [0.6, 0.5]])
        ens = quadrature_nodes(Gaussian([0.3, -1.0], cov), 4)
        np.testing.assert_allclose(ens.covariance(), cov, atol=1e-12)

    def test_singular_covariance_allowed(self):
        ens = quadrature_nodes(Gaussian([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]]), 3)
        np.testing.assert_allclose(ens.points[:, 0], ens.points[:, 1], atol=1e-12)

    def test_budget(self):
        with pytest.raises(BudgetExceededError):
            quadrature_nodes(Gaussian(np.zeros(7), np.eye(7)), 8)

    @pytest.mark.parametrize("order", [0, 11, 2.5])
    def test_order_range(self, order):
        with pytest.raises(ContractError):
            quadrature_nodes(Gaussian([0.0], [[1.0]]), order)

    def test_explicit_ensemble_passthrough(self):
        ens = quadrature_nodes(Ensemble([[0.0], [2.0], [5.0]], [0.5, 0.5, 0.0]), 3)
        assert ens.size == 2
        assert expectation(ens.points[:, 0], ens) == 1.0


class TestDistributionContracts:
    def test_asymmetric_covariance(self):
        with pytest.raises(ContractError):
            Gaussian([0.0, 0.0], [[1.0, 0.1], [0.0, 1.0]])

    def test_indefinite_covariance(self):
        with pytest.raises(ContractError):
            Gaussian([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            Gaussian([0.0, 0.0], np.eye(3))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ContractError):
            Ensemble([[0.0], [1.0]], [0.5, 0.6])

    def test_negative_weights(self):
        with pytest.raises(ContractError):
            Ensemble([[0.0], [1.0]], [1.5, -0.5])


class TestSample:
    def test_dirac_copies(self):
        ens = sample(Dirac([1.0, -2.0]), 7, seed=3)
        assert ens.size == 7
        assert np.all(ens.points == [1.0, -2.0])

    def test_clt_bound(self):
        n = 10**5
        ens = sample(Gaussian([0.0, 0.0], np.eye(2)), n, seed=42)
        assert np.all(np.abs(ens.mean()) < 3.0 / math.sqrt(n))

    def test_same_seed_bit_identical(self):
        d = Gaussian([0.5, 1.0], [[1.0, 0.3], [0.3, 2.0]])
        a, b = sample(d, 1000, 11), sample(d, 1000, 11)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.weights, b.weights)

    def test_different_seeds_differ(self):
        d = Gaussian([0.0], [[1.0]])
        assert not np.array_equal(sample(d, 10, 1).points, sample(d, 10, 2).points)

    def test_ensemble_resampling_respects_weights(self):
        ens = sample(Ensemble([[0.0], [1.0]], [0.25, 0.75]), 40000, seed=5)
        assert ens.mean()[0] == pytest.approx(0.75, abs=0.01)

    @pytest.mark.parametrize("n", [0, -3, 2.5])
    def test_bad_size(self, n):
        with pytest.raises(ContractError):
            sample(Dirac([0.0]), n, 0)


class TestExpectation:
    def test_constant(self):
        ens = quadrature_nodes(Gaussian([0.0], [[1.0]]), 6)
        assert expectation(np.full(ens.size, 2.5), ens) == pytest.approx(2.5, abs=1e-15)

    def test_two_nodes(self):
        ens = WeightedEnsemble(np.array([[0.0], [2.0]]), np.array([0.5, 0.5]))
        assert expectation([0.0, 2.0], ens) == 1.0

    def test_second_moment(self):
        ens = quadrature_nodes(Gaussian([0.0], [[1.0]]), 5)
        assert expectation(ens.points[:, 0] ** 2, ens) == pytest.approx(1.0, abs=1e-12)

    def test_length_mismatch(self):
        ens = WeightedEnsemble(np.array([[0.0], [2.0]]), np.array([0.5, 0.5]))
        with pytest.raises(ContractError):
            expectation([1.0, 2.0, 3.0], ens)

    @settings(max_examples=30, deadline=None)
    @given(
        mean=st.floats(-3, 3), var=st.floats(0.01, 4.0), a=st.floats(-2, 2), b=st.floats(-2, 2), c=st.floats(-2, 2),
    )
    def test_quadratic_integrand_exact(self, mean, var, a, b, c):
        ens = quadrature_nodes(Gaussian([mean], [[var]]), 3)
        x = ens.points[:, 0]
        exact = a * (mean**2 + var) + b * mean + c
        assert expectation(a * x**2 + b * x + c, ens) == pytest.approx(exact, abs=1e-10 * (1 + abs(exact)))
