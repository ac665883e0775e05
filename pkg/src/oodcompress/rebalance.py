"""Class priors, the complementary label-sampling distribution, auxiliary-set
construction, mixed priors, and per-class regularization weights.

The complementary distribution assigns more auxiliary mass to rarer classes:
with prior weights beta and alpha = max(beta) + min(beta), the rate for class
j is (alpha - beta_j) / (K*alpha - 1). Rates are nonnegative, sum to one, and
are strictly anti-monotone in beta. Mixing m_aux auxiliary samples labeled at
these rates into M originals moves the class prior toward uniform, reaching it
exactly at m_aux = M*(K*alpha - 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import Dataset, OODPool
from .errors import CapacityError, DomainError, NumericError, ShapeError

_CHI2_ALPHA = 1e-9  # construction-time sanity bound on the aux label histogram


@dataclass(frozen=True)
class ClassPrior:
    """Empirical class distribution beta_j = m_j / M."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.shape[0] < 1:
            raise ShapeError("prior weights must be a nonempty vector")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("prior weights must be nonnegative and sum to 1")

    @property
    def num_classes(self) -> int:
        return int(self.weights.shape[0])


@dataclass(frozen=True)
class ComplementaryDistribution:
    """Label-sampling rates for auxiliary data, anti-monotone in the prior."""

    alpha: float
    rates: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float)
        object.__setattr__(self, "rates", r)
        if np.any(r < -1e-15) or abs(r.sum() - 1.0) > 1e-12:
            raise DomainError("rates must be nonnegative and sum to 1")

    @property
    def num_classes(self) -> int:
        return int(self.rates.shape[0])


def class_prior(counts) -> ClassPrior:
    """beta_j = m_j / sum(m) from per-class sample counts."""
    m = np.asarray(counts, dtype=float)
    if np.any(m < 0):
        raise DomainError("class counts must be nonnegative")
    total = m.sum()
    if total < 1:
        raise DomainError("at least one sample is required to form a prior")
    return ClassPrior(m / total)


def complementary_distribution(prior: ClassPrior) -> ComplementaryDistribution:
    """Rates (alpha - beta_j) / (K*alpha - 1) with alpha = max(beta) + min(beta)."""
    beta = prior.weights
    k = prior.num_classes
    if k < 2:
        raise DomainError("complementary distribution needs at least 2 classes")
    alpha = float(beta.max() + beta.min())
    denom = k * alpha - 1.0
    if abs(denom) < 1e-12:
        raise DomainError("degenerate prior: K*alpha = 1")
    rates = (alpha - beta) / denom
    return ComplementaryDistribution(alpha, rates)


def assign_ood_labels(
    pool: OODPool, dist: ComplementaryDistribution, m_aux: int, seed: int
) -> Dataset:
    """Draw m_aux pool rows without replacement and label each one i.i.d.
    from the complementary rates. Labels are fixed at construction and reused
    by every consumer (compression and fine-tuning alike).
    """
    if m_aux < 0:
        raise DomainError("m_aux must be nonnegative")
    if m_aux > pool.n_pool:
        raise CapacityError(f"m_aux={m_aux} exceeds pool size {pool.n_pool}")
    rng = np.random.default_rng(seed)
    rows = rng.choice(pool.n_pool, size=m_aux, replace=False)
    p = dist.rates / dist.rates.sum()
    labels = rng.choice(dist.num_classes, size=m_aux, p=p)
    aux = Dataset(pool.features[rows].copy(), labels, dist.num_classes, provenance="auxiliary")
    if m_aux >= 200:
        _check_label_histogram(aux.class_counts, dist.rates, m_aux)
    return aux


def _check_label_histogram(counts, rates, m_aux):
    expected = m_aux * np.asarray(rates, dtype=float)
    keep = expected >= 5.0  # classic validity threshold for the chi-square stat
    if keep.sum() < 2:
        return
    observed = counts[keep].astype(float)
    exp = expected[keep]
    # compare within the kept cells only (both renormalized to the same mass)
    observed *= exp.sum() / observed.sum()
    stat = float(np.sum((observed - exp) ** 2 / exp))
    pvalue = float(stats.chi2.sf(stat, df=int(keep.sum()) - 1))
    if pvalue < _CHI2_ALPHA:
        raise NumericError(
            f"auxiliary label histogram deviates from its sampling rates "
            f"(chi2={stat:.2f}, p={pvalue:.2e})"
        )


def mixed_prior(prior: ClassPrior, m_few: int, dist: ComplementaryDistribution, m_aux: float) -> np.ndarray:
    """Class prior of the few+auxiliary mixture: (M*beta + m_aux*rates) / (M + m_aux).

    m_aux may be fractional for analysis; m_aux = uniformizing_aux_size(...)
    makes the result exactly uniform.
    """
    if m_few < 1:
        raise DomainError("m_few must be >= 1")
    if m_aux < 0:
        raise DomainError("m_aux must be nonnegative")
    return (m_few * prior.weights + m_aux * dist.rates) / (m_few + m_aux)


def uniformizing_aux_size(prior: ClassPrior, m_few: int) -> float:
    """Auxiliary-set size M*(K*alpha - 1) at which the mixed prior is uniform."""
    dist = complementary_distribution(prior)
    return float(m_few * (prior.num_classes * dist.alpha - 1.0))


def regularization_weights(dist: ComplementaryDistribution) -> np.ndarray:
    """Per-class regularization weights K * rates: mean 1 over classes, larger
    for minority classes since the rates are anti-monotone in the prior."""
    return dist.num_classes * dist.rates
