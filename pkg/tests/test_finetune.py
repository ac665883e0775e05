"""Regularized fine-tuning: loss composition, early stopping, best snapshot."""

import numpy as np
import pytest

from oodcompress import compress, data, finetune, nn
from oodcompress.data import Dataset
from oodcompress.errors import DomainError
from oodcompress.finetune import FinetuneConfig
from oodcompress.nn import Network

from helpers import assert_grads_close, numeric_grads


def passthrough_net():
    """Identity dense layer: logits equal the 2-d input."""
    net = Network([nn.dense(2, 2)], (2,), seed=0)
    net.params[0]["W"] = np.eye(2)
    net.params[0]["b"] = np.zeros(2)
    return net


def tiny_world(seed=0):
    full, test = data.synth_dataset(3, 4, per_class=40, separation=3.0, seed=seed)
    teacher = Network(
        [nn.dense(4, 10), nn.relu(), nn.softmax_head(10, 3)], (4,), seed=seed
    )
    nn.train_classifier(teacher, full.features, full.labels, 15, 16, 0.05, seed=seed)
    few = data.subsample(full, np.array([8, 3, 1]), seed=seed)
    rng = np.random.default_rng(seed + 9)
    aux = Dataset(
        rng.standard_normal((12, 4)) + 6.0, rng.integers(0, 3, 12), 3, provenance="auxiliary"
    )
    val, test = data.split_validation(test, 0.3, seed=seed)
    return teacher, few, aux, val, test


class TestRegularizationLoss:
    def test_perfect_predictions_cost_nothing(self):
        net = passthrough_net()
        # saturated logits make the picked probability exactly 1.0
        feats = np.array([[1000.0, 0.0], [0.0, 1000.0]])
        aux = Dataset(feats, np.array([0, 1]), 2, provenance="auxiliary")
        assert finetune.regularization_loss(net, aux, np.ones(2)) == 0.0

    def test_unit_weights_reduce_to_plain_cross_entropy(self):
        net = passthrough_net()
        rng = np.random.default_rng(0)
        feats = rng.standard_normal((20, 2))
        aux = Dataset(feats, rng.integers(0, 2, 20), 2, provenance="auxiliary")
        reg = finetune.regularization_loss(net, aux, np.ones(2))
        probs = nn.softmax(feats)
        plain = np.mean([nn.cross_entropy(probs[i], aux.labels[i]) for i in range(20)])
        assert reg == pytest.approx(plain, abs=1e-12)

    def test_hand_weighted_two_sample_value(self):
        net = passthrough_net()
        # sample 0: logits (0, 0), label 0 -> CE = ln 2
        # sample 1: logits (ln 3, 0), label 1 -> p_1 = 0.25 -> CE = ln 4
        feats = np.array([[0.0, 0.0], [np.log(3.0), 0.0]])
        aux = Dataset(feats, np.array([0, 1]), 2, provenance="auxiliary")
        reg = finetune.regularization_loss(net, aux, np.array([0.4, 1.6]))
        expected = 0.5 * (0.4 * np.log(2) + 1.6 * np.log(4))
        assert reg == pytest.approx(expected, abs=1e-12)
        assert reg == pytest.approx(1.2477, abs=1e-4)

    def test_scales_linearly_in_the_weights(self):
        net = passthrough_net()
        rng = np.random.default_rng(1)
        aux = Dataset(rng.standard_normal((15, 2)), rng.integers(0, 2, 15), 2, "auxiliary")
        w = np.array([0.7, 1.3])
        assert finetune.regularization_loss(net, aux, 2 * w) == pytest.approx(
            2 * finetune.regularization_loss(net, aux, w), abs=1e-12
        )

    def test_empty_aux_rejected(self):
        empty = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2, "auxiliary")
        with pytest.raises(DomainError):
            finetune.regularization_loss(passthrough_net(), empty, np.ones(2))


class TestTotalLoss:
    def few_and_aux(self):
        rng = np.random.default_rng(2)
        few = Dataset(rng.standard_normal((10, 2)), rng.integers(0, 2, 10), 2, "few")
        aux = Dataset(rng.standard_normal((6, 2)), rng.integers(0, 2, 6), 2, "auxiliary")
        return few, aux

    def test_zero_reg_weight_is_plain_empirical_cross_entropy(self):
        net = passthrough_net()
        few, aux = self.few_and_aux()
        total = finetune.total_loss(net, few, aux, np.ones(2), reg_weight=0.0)
        probs = nn.softmax(few.features)
        plain = np.mean([nn.cross_entropy(probs[i], few.labels[i]) for i in range(few.n)])
        assert total == plain

    def test_component_sum_matches_hand_addition(self):
        net = passthrough_net()
        few, aux = self.few_and_aux()
        w = np.array([0.5, 1.5])
        eta = 2.5
        total = finetune.total_loss(net, few, aux, w, eta)
        ce = finetune.total_loss(net, few, None, w, 0.0)
        reg = finetune.regularization_loss(net, aux, w)
        assert total == pytest.approx(ce + eta * reg, abs=1e-12)

    def test_perfect_net_is_zero_for_any_eta(self):
        net = passthrough_net()
        few = Dataset(np.array([[1000.0, 0.0]]), np.array([0]), 2, "few")
        aux = Dataset(np.array([[0.0, 1000.0]]), np.array([1]), 2, "auxiliary")
        for eta in (0.0, 1.0, 5.0):
            assert finetune.total_loss(net, few, aux, np.ones(2), eta) == 0.0


class TestObjectiveGradients:
    def test_matches_finite_differences(self):
        net = Network(
            [nn.dense(3, 6), nn.relu(), nn.softmax_head(6, 3)], (3,), seed=4
        )
        assert net.param_count() <= 200
        rng = np.random.default_rng(5)
        few = Dataset(rng.standard_normal((7, 3)), rng.integers(0, 3, 7), 3, "few")
        aux = Dataset(rng.standard_normal((5, 3)), rng.integers(0, 3, 5), 3, "auxiliary")
        w = np.array([0.4, 1.0, 1.6])

        def loss_fn(n):
            return finetune.total_loss(n, few, aux, w, reg_weight=2.5)

        _, analytic = finetune.finetune_objective(net, few, aux, w, reg_weight=2.5)
        numeric = numeric_grads(loss_fn, net)
        assert_grads_close(analytic, numeric)


class TestFinetuneLoop:
    def test_rigged_metric_returns_first_epoch_snapshot(self):
        teacher, few, aux, val, _ = tiny_world()
        student = teacher.copy(role="student")
        metrics = iter([1.0, 0.9, 0.8, 0.7, 0.6])
        cfg = FinetuneConfig(reg_weight=0.0, epochs=50, patience=1, batch_size=4,
                             learning_rate=0.05, seed=6)
        best, log = finetune.finetune(
            student, few, None, np.ones(3), cfg, val, val_metric=lambda n, v: next(metrics)
        )
        assert len(log) == 2  # stopped right after the first non-improving epoch
        one_epoch_cfg = FinetuneConfig(reg_weight=0.0, epochs=1, patience=5, batch_size=4,
                                       learning_rate=0.05, seed=6)
        reference, _ = finetune.finetune(student, few, None, np.ones(3), one_epoch_cfg, val)
        for a, b in zip(best.params, reference.params):
            for name in a:
                np.testing.assert_array_equal(a[name], b[name])

    def test_zero_reg_weight_ignores_auxiliary_set(self):
        teacher, few, aux, val, _ = tiny_world()
        cfg = FinetuneConfig(reg_weight=0.0, epochs=6, patience=10, batch_size=4,
                             learning_rate=0.05, seed=1)
        with_aux, log_a = finetune.finetune(teacher, few, aux, np.ones(3), cfg, val)
        without, log_b = finetune.finetune(teacher, few, None, np.ones(3), cfg, val)
        assert log_a == log_b
        for a, b in zip(with_aux.params, without.params):
            for name in a:
                np.testing.assert_array_equal(a[name], b[name])

    def test_returned_network_attains_best_logged_metric(self):
        teacher, few, aux, val, _ = tiny_world(seed=3)
        student = compress.apply_prune(
            teacher, compress.PruningPlan({0: (0, 3, 5)}, 0.3)
        )
        cfg = FinetuneConfig(reg_weight=1.0, epochs=25, patience=8, batch_size=4,
                             learning_rate=0.05, seed=2)
        best, log = finetune.finetune(student, few, aux, np.ones(3), cfg, val)
        best_logged = max(entry["val_top1"] for entry in log)
        assert finetune.top1_accuracy(best, val) == pytest.approx(best_logged, abs=1e-12)

    def test_determinism(self):
        teacher, few, aux, val, _ = tiny_world(seed=4)
        cfg = FinetuneConfig(reg_weight=1.5, epochs=10, patience=10, batch_size=4,
                             learning_rate=0.05, seed=11)
        a_net, a_log = finetune.finetune(teacher, few, aux, np.ones(3), cfg, val)
        b_net, b_log = finetune.finetune(teacher, few, aux, np.ones(3), cfg, val)
        assert a_log == b_log
        for a, b in zip(a_net.params, b_net.params):
            for name in a:
                np.testing.assert_array_equal(a[name], b[name])

    def test_epoch_log_csv(self, tmp_path):
        teacher, few, aux, val, _ = tiny_world(seed=5)
        cfg = FinetuneConfig(reg_weight=1.0, epochs=4, patience=10, batch_size=4,
                             learning_rate=0.05, seed=0)
        _, log = finetune.finetune(teacher, few, aux, np.ones(3), cfg, val)
        path = tmp_path / "epochs.csv"
        finetune.write_epoch_log(log, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,reg_loss,val_top1"
        assert len(lines) == len(log) + 1
