"""Class priors, complementary rates, auxiliary labeling, and mixed priors."""

import numpy as np
import pytest

from oodcompress import data, rebalance
from oodcompress.errors import CapacityError, DomainError
from oodcompress.rebalance import ClassPrior


def random_prior(rng, k):
    w = rng.uniform(0.01, 1.0, k)
    return ClassPrior(w / w.sum())


class TestClassPrior:
    def test_uniform_counts(self):
        np.testing.assert_allclose(rebalance.class_prior([1, 1, 1, 1]).weights, [0.25] * 4)

    def test_hand_divided_three_class(self):
        np.testing.assert_allclose(
            rebalance.class_prior([90, 9, 1]).weights, [0.9, 0.09, 0.01], atol=1e-15
        )

    def test_hand_divided_two_class(self):
        np.testing.assert_allclose(rebalance.class_prior([3, 1]).weights, [0.75, 0.25])

    def test_all_zero_counts_rejected(self):
        with pytest.raises(DomainError):
            rebalance.class_prior([0, 0, 0])


class TestComplementaryDistribution:
    def test_uniform_prior_is_a_fixed_point(self):
        k = 5
        dist = rebalance.complementary_distribution(ClassPrior(np.full(k, 1 / k)))
        np.testing.assert_allclose(dist.rates, np.full(k, 1 / k), atol=1e-12)
        assert dist.alpha == pytest.approx(2 / k)

    def test_two_class_hand_value(self):
        dist = rebalance.complementary_distribution(ClassPrior([0.8, 0.2]))
        assert dist.alpha == pytest.approx(1.0)
        np.testing.assert_allclose(dist.rates, [0.2, 0.8], atol=1e-12)

    def test_three_class_hand_value(self):
        dist = rebalance.complementary_distribution(ClassPrior([0.6, 0.3, 0.1]))
        assert dist.alpha == pytest.approx(0.7)
        np.testing.assert_allclose(dist.rates, [0.1 / 1.1, 0.4 / 1.1, 0.6 / 1.1], atol=1e-12)
        np.testing.assert_allclose(dist.rates, [0.0909, 0.3636, 0.5455], atol=1e-4)

    def test_rates_sum_to_one_nonneg_antimonotone(self):
        rng = np.random.default_rng(42)
        for _ in range(500):
            k = int(rng.integers(2, 21))
            prior = random_prior(rng, k)
            dist = rebalance.complementary_distribution(prior)
            assert abs(dist.rates.sum() - 1.0) <= 1e-12
            assert np.all(dist.rates >= 0)
            beta = prior.weights
            for i in range(k):
                for j in range(k):
                    if beta[i] < beta[j] - 1e-12:
                        assert dist.rates[i] > dist.rates[j]


class TestAssignOodLabels:
    def pool(self, n=600, dim=5, seed=0):
        feats = np.random.default_rng(seed).standard_normal((n, dim))
        return data.OODPool(feats, frozenset())

    def test_degenerate_one_hot_rates(self):
        # a prior putting all-but-epsilon mass off class 2 makes rate_2 ~ 1
        dist = rebalance.ComplementaryDistribution(1.0, np.array([0.0, 0.0, 1.0]))
        aux = rebalance.assign_ood_labels(self.pool(), dist, m_aux=50, seed=0)
        assert np.all(aux.labels == 2)

    def test_uniform_rates_frequencies_within_3_sigma(self):
        k = 4
        dist = rebalance.ComplementaryDistribution(2 / k, np.full(k, 1 / k))
        pool = self.pool(n=12000)
        aux = rebalance.assign_ood_labels(pool, dist, m_aux=10000, seed=1)
        counts = aux.class_counts
        expected = 10000 / k
        sigma = np.sqrt(10000 * (1 / k) * (1 - 1 / k))
        assert np.all(np.abs(counts - expected) <= 3 * sigma)

    def test_same_seed_identical_assignments(self):
        dist = rebalance.complementary_distribution(ClassPrior([0.5, 0.3, 0.2]))
        pool = self.pool()
        a = rebalance.assign_ood_labels(pool, dist, 100, seed=3)
        b = rebalance.assign_ood_labels(pool, dist, 100, seed=3)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.features, b.features)

    def test_rows_drawn_without_replacement(self):
        dist = rebalance.complementary_distribution(ClassPrior([0.6, 0.4]))
        pool = self.pool(n=50)
        aux = rebalance.assign_ood_labels(pool, dist, 50, seed=2)
        digests = {r.tobytes() for r in aux.features}
        assert len(digests) == 50

    def test_capacity_error_beyond_pool(self):
        dist = rebalance.complementary_distribution(ClassPrior([0.6, 0.4]))
        with pytest.raises(CapacityError):
            rebalance.assign_ood_labels(self.pool(n=10), dist, 11, seed=0)

    def test_histogram_sanity_holds_at_construction(self):
        # the chi-square construction bound must not fire for honest sampling
        rng = np.random.default_rng(0)
        pool = self.pool(n=5000)
        for trial in range(20):
            prior = random_prior(rng, int(rng.integers(2, 8)))
            dist = rebalance.complementary_distribution(prior)
            rebalance.assign_ood_labels(pool, dist, 2000, seed=trial)


class TestMixedPrior:
    def test_no_aux_is_identity(self):
        prior = ClassPrior([0.7, 0.2, 0.1])
        dist = rebalance.complementary_distribution(prior)
        np.testing.assert_allclose(rebalance.mixed_prior(prior, 10, dist, 0), prior.weights)

    def test_uniformizing_size_gives_exactly_uniform(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            k = int(rng.integers(2, 21))
            prior = random_prior(rng, k)
            dist = rebalance.complementary_distribution(prior)
            m = int(rng.integers(1, 500))
            m_aux = rebalance.uniformizing_aux_size(prior, m)
            mixed = rebalance.mixed_prior(prior, m, dist, m_aux)
            np.testing.assert_allclose(mixed, np.full(k, 1 / k), atol=1e-12)

    def test_two_class_hand_arithmetic(self):
        prior = ClassPrior([0.8, 0.2])
        dist = rebalance.complementary_distribution(prior)
        mixed = rebalance.mixed_prior(prior, 10, dist, 10)
        np.testing.assert_allclose(mixed, [0.5, 0.5], atol=1e-12)


class TestRegularizationWeights:
    def test_uniform_rates_give_unit_weights(self):
        dist = rebalance.ComplementaryDistribution(0.5, np.full(4, 0.25))
        np.testing.assert_allclose(rebalance.regularization_weights(dist), np.ones(4))

    def test_two_class_hand_value(self):
        dist = rebalance.ComplementaryDistribution(1.0, np.array([0.2, 0.8]))
        np.testing.assert_allclose(rebalance.regularization_weights(dist), [0.4, 1.6])

    def test_three_class_hand_value(self):
        dist = rebalance.complementary_distribution(ClassPrior([0.6, 0.3, 0.1]))
        np.testing.assert_allclose(
            rebalance.regularization_weights(dist), [0.273, 1.091, 1.636], atol=1e-3
        )

    def test_mean_weight_is_one(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            prior = random_prior(rng, int(rng.integers(2, 12)))
            w = rebalance.regularization_weights(rebalance.complementary_distribution(prior))
            assert np.mean(w) == pytest.approx(1.0, abs=1e-12)
