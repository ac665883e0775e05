"""Exhaustive Bayes-classifier oracle on small discrete distributions.

Mixing uniformly labeled out-of-distribution mass into a joint distribution
adds the same constant to every class column at each point, so the Bayes
prediction argmax_y P(x, y) cannot move at any in-distribution point. This
module verifies that statement by brute force over random finite instances
and *measures* (without asserting) the prediction shift under the
complementary, non-uniform labeling used by the rebalancing pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .rebalance import ClassPrior, complementary_distribution


@dataclass(frozen=True)
class DiscreteJoint:
    """Joint distribution P(x, y) on a finite support x list and K classes."""

    support: tuple
    table: np.ndarray  # [|support|, K]

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "support", tuple(self.support))
        if t.ndim != 2 or t.shape[0] != len(self.support):
            raise ShapeError(f"table shape {t.shape} does not match support of {len(self.support)}")
        if np.any(t < 0) or abs(t.sum() - 1.0) > 1e-12:
            raise DomainError("joint table must be nonnegative and sum to 1")

    @property
    def num_classes(self) -> int:
        return int(self.table.shape[1])

    def class_marginal(self) -> np.ndarray:
        return self.table.sum(axis=0)

    def posterior(self, x) -> np.ndarray:
        """P(y | x); requires positive mass at x."""
        row = self.table[self._index(x)]
        total = row.sum()
        if total <= 0:
            raise DomainError(f"point {x!r} carries no probability mass")
        return row / total

    def _index(self, x) -> int:
        try:
            return self.support.index(x)
        except ValueError:
            raise DomainError(f"point {x!r} is not in the support") from None


@dataclass(frozen=True)
class OODMarginal:
    """Marginal P_out(x) of the out-of-distribution component and its mixture
    weight (the fraction of total mass it contributes)."""

    support: tuple
    marginal: np.ndarray
    mix_weight: float

    def __post_init__(self):
        m = np.asarray(self.marginal, dtype=float)
        object.__setattr__(self, "marginal", m)
        object.__setattr__(self, "support", tuple(self.support))
        if m.shape != (len(self.support),):
            raise ShapeError("marginal length must match the support")
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise DomainError("marginal must be nonnegative and sum to 1")
        if not 0 <= self.mix_weight < 1:
            raise DomainError("mix_weight must lie in [0, 1)")


def bayes_predict(joint: DiscreteJoint, x) -> int:
    """argmax_y P(x, y); ties break toward the lowest class index."""
    return int(np.argmax(joint.table[joint._index(x)]))


def mix(joint: DiscreteJoint, ood: OODMarginal, label_dist: np.ndarray) -> DiscreteJoint:
    """Blend OOD mass labeled by `label_dist` into the joint:

    P_mix(x, y) = (1 - pi) * P(x, y) + pi * P_out(x) * label_dist[y]

    over the union support (in-distribution points first, in order).
    """
    dist = np.asarray(label_dist, dtype=float)
    if dist.shape != (joint.num_classes,):
        raise ShapeError(f"label_dist length {dist.shape} does not match {joint.num_classes} classes")
    if np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-12:
        raise DomainError("label_dist must be a probability vector")
    pi = ood.mix_weight
    union = list(joint.support) + [x for x in ood.support if x not in joint.support]
    table = np.zeros((len(union), joint.num_classes))
    table[: len(joint.support)] = (1.0 - pi) * joint.table
    ood_index = {x: i for i, x in enumerate(ood.support)}
    for row, x in enumerate(union):
        if x in ood_index:
            table[row] += pi * ood.marginal[ood_index[x]] * dist
    return DiscreteJoint(tuple(union), table)


def prediction_shift(joint: DiscreteJoint, ood: OODMarginal, label_dist: np.ndarray):
    """Mix and compare Bayes predictions at every in-distribution point.

    Returns (changed_fraction, max_posterior_delta) where the delta is the
    largest absolute change of any class posterior P(y|x).
    """
    mixed = mix(joint, ood, label_dist)
    changed = 0
    max_delta = 0.0
    for x in joint.support:
        if bayes_predict(mixed, x) != bayes_predict(joint, x):
            changed += 1
        max_delta = max(max_delta, float(np.max(np.abs(mixed.posterior(x) - joint.posterior(x)))))
    return changed / len(joint.support), max_delta


def _random_instance(rng: np.random.Generator, max_support: int, max_classes: int):
    n_points = int(rng.integers(2, max_support + 1))
    k = int(rng.integers(2, max_classes + 1))
    table = rng.uniform(0.05, 1.0, size=(n_points, k))
    table /= table.sum()
    joint = DiscreteJoint(tuple(range(n_points)), table)

    overlap = int(rng.integers(1, n_points + 1))
    inside = list(rng.choice(n_points, size=overlap, replace=False))
    extra = [n_points + e for e in range(int(rng.integers(0, 4)))]
    support = tuple(int(x) for x in inside) + tuple(extra)
    marginal = rng.uniform(0.05, 1.0, size=len(support))
    marginal /= marginal.sum()
    pi = float(rng.uniform(0.05, 0.95))
    return joint, OODMarginal(support, marginal, pi)


def theorem1_check(trials: int, seed: int, max_support: int = 8, max_classes: int = 5) -> dict:
    """Measure Bayes-prediction shift over random mixing instances.

    For each of `trials` random (joint, ood, pi) instances the in-distribution
    predictions are compared after mixing with (a) uniform labels, which
    provably never shift any prediction, and (b) the complementary
    distribution of the joint's class marginal, whose shift rate is a
    measurement, not a guarantee.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    points = 0
    uniform_changed = 0
    complementary_changed = 0
    max_delta = 0.0
    for _ in range(trials):
        joint, ood = _random_instance(rng, max_support, max_classes)
        k = joint.num_classes
        uniform = np.full(k, 1.0 / k)
        comp = complementary_distribution(ClassPrior(joint.class_marginal())).rates
        u_rate, u_delta = prediction_shift(joint, ood, uniform)
        c_rate, c_delta = prediction_shift(joint, ood, comp)
        n = len(joint.support)
        points += n
        uniform_changed += round(u_rate * n)
        complementary_changed += round(c_rate * n)
        max_delta = max(max_delta, u_delta, c_delta)
    return {
        "trials": trials,
        "points": points,
        "uniform_shift_rate": uniform_changed / points,
        "complementary_shift_rate": complementary_changed / points,
        "max_posterior_perturbation": max_delta,
    }
