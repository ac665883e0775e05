"""Discrete Bayes-classifier oracle: prediction, mixing, and invariance."""

import numpy as np
import pytest

from oodcompress import bayes
from oodcompress.bayes import DiscreteJoint, OODMarginal
from oodcompress.errors import DomainError
from oodcompress.rebalance import ClassPrior, complementary_distribution


def joint_from(table):
    t = np.asarray(table, dtype=float)
    t = t / t.sum()
    return DiscreteJoint(tuple(range(t.shape[0])), t)


class TestBayesPredict:
    def test_concentrated_mass_wins(self):
        joint = joint_from([[0.01, 0.01, 0.9], [0.2, 0.2, 0.2]])
        assert bayes.bayes_predict(joint, 0) == 2

    def test_exact_tie_breaks_to_lowest_index(self):
        joint = joint_from([[0.3, 0.1, 0.2, 0.3]])
        assert bayes.bayes_predict(joint, 0) == 0

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            table = rng.uniform(0.01, 1.0, size=(4, 3))
            joint = joint_from(table)
            for x in joint.support:
                row = joint.table[x]
                best, best_val = 0, row[0]
                for y in range(1, 3):  # independent brute-force scan
                    if row[y] > best_val:
                        best, best_val = y, row[y]
                assert bayes.bayes_predict(joint, x) == best

    def test_point_outside_support_rejected(self):
        with pytest.raises(DomainError):
            bayes.bayes_predict(joint_from([[1.0, 1.0]]), 5)

    def test_argmax_invariant_under_rescaling(self):
        rng = np.random.default_rng(0)
        table = rng.uniform(0.01, 1.0, size=(5, 4))
        joint = joint_from(table)
        scaled = joint_from(table * 7.3)
        for x in joint.support:
            assert bayes.bayes_predict(joint, x) == bayes.bayes_predict(scaled, x)


class TestMix:
    def test_zero_weight_is_identity(self):
        joint = joint_from([[0.4, 0.1], [0.2, 0.3]])
        ood = OODMarginal((0, 1), np.array([0.5, 0.5]), mix_weight=0.0)
        mixed = bayes.mix(joint, ood, np.array([0.5, 0.5]))
        np.testing.assert_array_equal(mixed.table, joint.table)

    def test_disjoint_support_scales_in_distribution_rows(self):
        joint = joint_from([[0.4, 0.1], [0.2, 0.3]])
        ood = OODMarginal((10, 11), np.array([0.7, 0.3]), mix_weight=0.4)
        mixed = bayes.mix(joint, ood, np.array([0.9, 0.1]))
        np.testing.assert_allclose(mixed.table[:2], 0.6 * joint.table, atol=1e-15)
        assert mixed.support == (0, 1, 10, 11)

    def test_hand_mixed_two_point_fixture(self):
        joint = joint_from([[0.5, 0.1], [0.1, 0.3]])
        ood = OODMarginal((0,), np.array([1.0]), mix_weight=0.5)
        mixed = bayes.mix(joint, ood, np.array([0.5, 0.5]))
        # row 0: 0.5*[0.5, 0.1] + 0.5*1.0*[0.5, 0.5] = [0.5, 0.3]
        # row 1: 0.5*[0.1, 0.3]                       = [0.05, 0.15]
        np.testing.assert_allclose(mixed.table, [[0.5, 0.3], [0.05, 0.15]], atol=1e-15)

    def test_mixed_table_is_a_valid_joint(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            joint, ood = bayes._random_instance(rng, 6, 4)
            dist = rng.uniform(0.01, 1.0, joint.num_classes)
            mixed = bayes.mix(joint, ood, dist / dist.sum())
            assert np.all(mixed.table >= 0)
            assert abs(mixed.table.sum() - 1.0) <= 1e-12


class TestTheorem1:
    def test_uniform_mixing_never_shifts_predictions(self):
        report = bayes.theorem1_check(trials=1000, seed=42)
        assert report["uniform_shift_rate"] == 0.0
        assert report["points"] >= 2000

    def test_disjoint_support_never_shifts_for_any_label_dist(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(2, 7))
            k = int(rng.integers(2, 5))
            table = rng.uniform(0.05, 1.0, size=(n, k))
            joint = joint_from(table)
            extra = tuple(range(n, n + int(rng.integers(1, 4))))
            marginal = rng.uniform(0.05, 1.0, len(extra))
            ood = OODMarginal(extra, marginal / marginal.sum(), float(rng.uniform(0.05, 0.95)))
            dist = rng.uniform(0.01, 1.0, k)
            rate, _ = bayes.prediction_shift(joint, ood, dist / dist.sum())
            assert rate == 0.0

    def test_complementary_shift_is_reported_not_asserted(self):
        report = bayes.theorem1_check(trials=300, seed=0)
        assert 0.0 <= report["complementary_shift_rate"] <= 1.0
        assert report["max_posterior_perturbation"] >= 0.0

    def test_complementary_mixing_can_shift_a_constructed_instance(self):
        # head-heavy prior: complementary labels pile mass onto class 1 at x=0
        joint = joint_from([[0.60, 0.30], [0.08, 0.02]])
        comp = complementary_distribution(ClassPrior(joint.class_marginal())).rates
        ood = OODMarginal((0,), np.array([1.0]), mix_weight=0.5)
        rate, _ = bayes.prediction_shift(joint, ood, comp)
        assert rate > 0.0
        uniform_rate, _ = bayes.prediction_shift(joint, ood, np.array([0.5, 0.5]))
        assert uniform_rate == 0.0

    def test_report_is_deterministic(self):
        a = bayes.theorem1_check(trials=50, seed=5)
        b = bayes.theorem1_check(trials=50, seed=5)
        assert a == b
