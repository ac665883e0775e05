"""Datasets for the compression pipeline: synthetic class clusters, long-tailed
few-sample subsets, and a deduplicated out-of-distribution candidate pool.

Every generator is a pure function of its inputs and a seed. Datasets can be
round-tripped through a small self-describing binary container (magic
``OEFS1``) or imported from CSV fixtures (label in the last column).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, DomainError, ShapeError

MAGIC = b"OEFS1"

PROVENANCES = ("full", "few", "ood-pool", "auxiliary", "validation", "test")


@dataclass
class Dataset:
    """Feature matrix plus optional integer labels.

    features: [n, ...] float array. labels: [n] ints in [0, num_classes) or
    None for raw pools. provenance is one of PROVENANCES.
    """

    features: np.ndarray
    labels: np.ndarray | None
    num_classes: int | None
    provenance: str = "full"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.provenance not in PROVENANCES:
            raise DomainError(f"unknown provenance {self.provenance!r}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ShapeError(
                    f"labels shape {self.labels.shape} does not match {self.features.shape[0]} samples"
                )
            if self.num_classes is None:
                raise DomainError("labeled dataset requires num_classes")
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise DomainError(f"labels out of range [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def class_counts(self) -> np.ndarray:
        """Per-class sample counts m_j (labels required)."""
        if self.labels is None:
            raise DomainError("class_counts requires labels")
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class LongTailPlan:
    """Exponentially decaying per-class sample counts.

    counts[j] = max(1, round(n_max * rho**(-j / (K-1)))), so counts are
    non-increasing, counts[0] == n_max and every class keeps at least one
    sample. The realized head-to-tail ratio tracks rho up to rounding.
    """

    num_classes: int
    rho: float
    n_max: int
    counts: tuple

    def __post_init__(self):
        c = np.asarray(self.counts)
        if self.num_classes < 2:
            raise DomainError("a long-tail plan needs at least 2 classes")
        if self.rho < 1:
            raise DomainError("imbalance ratio rho must be >= 1")
        if c.shape != (self.num_classes,):
            raise ShapeError("counts length must equal the class count")
        if np.any(np.diff(c) > 0):
            raise DomainError("counts must be non-increasing")
        if c[0] != self.n_max or c[-1] < 1:
            raise DomainError("counts must start at n_max and stay >= 1")

    @property
    def total(self) -> int:
        return int(sum(self.counts))


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def long_tail_counts(num_classes: int, rho: float, n_max: int) -> LongTailPlan:
    """Standard exponential long-tail profile, floored at one sample per class."""
    if num_classes < 2:
        raise DomainError("need at least 2 classes")
    if rho < 1:
        raise DomainError("imbalance ratio rho must be >= 1")
    if n_max < 1:
        raise DomainError("head-class count n_max must be >= 1")
    counts = tuple(
        max(1, _round_half_up(n_max * rho ** (-j / (num_classes - 1))))
        for j in range(num_classes)
    )
    return LongTailPlan(num_classes, float(rho), int(n_max), counts)


def balanced_counts(num_classes: int, total: int) -> np.ndarray:
    """As-equal-as-possible counts summing to `total` (first classes get +1)."""
    if total < num_classes:
        raise DomainError(f"cannot spread {total} samples over {num_classes} classes")
    base, rem = divmod(total, num_classes)
    return np.array([base + (1 if j < rem else 0) for j in range(num_classes)])


def subsample(source: Dataset, plan, seed: int) -> Dataset:
    """Draw counts[j] samples per class without replacement, seeded.

    `plan` may be a LongTailPlan or a raw per-class count vector. Selected rows
    are copied verbatim from the source (a sub-multiset, no augmentation).
    """
    counts = np.asarray(plan.counts if isinstance(plan, LongTailPlan) else plan, dtype=np.int64)
    if source.labels is None:
        raise DomainError("subsample requires a labeled source")
    if counts.shape != (source.num_classes,):
        raise ShapeError(f"plan covers {counts.shape[0]} classes, source has {source.num_classes}")
    rng = np.random.default_rng(seed)
    picked = []
    for j, want in enumerate(counts):
        pool = np.flatnonzero(source.labels == j)
        if pool.size < want:
            raise CapacityError(f"class {j} has {pool.size} samples, plan wants {int(want)}")
        picked.append(rng.choice(pool, size=int(want), replace=False))
    idx = np.concatenate(picked)
    return Dataset(
        source.features[idx].copy(),
        source.labels[idx].copy(),
        source.num_classes,
        provenance="few",
    )


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------


def _random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))[None, :]


def _class_means(num_classes: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Class centers with pairwise spacing `separation` (exact when K <= dim)."""
    rot = _random_rotation(dim, rng)
    if num_classes <= dim:
        basis = np.eye(dim)[:num_classes]
    else:
        basis = rng.standard_normal((num_classes, dim))
        basis /= np.linalg.norm(basis, axis=1, keepdims=True)
    return (separation / np.sqrt(2.0)) * basis @ rot.T


def synth_dataset(
    num_classes: int,
    dim: int,
    per_class: int,
    separation: float,
    seed: int,
    test_per_class: int = 50,
) -> tuple:
    """Balanced unit-variance Gaussian clusters; disjoint train/test split.

    Returns (train, test) Datasets. separation == 0 makes classes
    indistinguishable (chance-level Bayes accuracy).
    """
    if num_classes < 2 or dim < 2:
        raise DomainError("need num_classes >= 2 and dim >= 2")
    if separation < 0:
        raise DomainError("separation must be nonnegative")
    rng = np.random.default_rng(seed)
    means = _class_means(num_classes, dim, separation, rng)

    def draw(count):
        feats = np.concatenate(
            [means[j] + rng.standard_normal((count, dim)) for j in range(num_classes)]
        )
        labels = np.repeat(np.arange(num_classes), count)
        return feats, labels

    train_x, train_y = draw(per_class)
    test_x, test_y = draw(test_per_class)
    return (
        Dataset(train_x, train_y, num_classes, provenance="full"),
        Dataset(test_x, test_y, num_classes, provenance="test"),
    )


def synth_ood_source(
    dim: int,
    n: int,
    separation: float,
    shift: float,
    seed: int,
    n_clusters: int = 6,
) -> Dataset:
    """Unlabeled pool from a shifted, independently rotated cluster structure.

    Distributionally distinct from synth_dataset output: its own rotation,
    its own cluster centers, and a global offset of magnitude `shift`.
    """
    rng = np.random.default_rng(seed)
    means = _class_means(n_clusters, dim, separation, rng)
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    means = means + shift * direction
    assignment = rng.integers(0, n_clusters, size=n)
    feats = means[assignment] + rng.standard_normal((n, dim))
    return Dataset(feats, None, None, provenance="ood-pool")


def split_validation(test: Dataset, fraction: float, seed: int) -> tuple:
    """Split a labeled pool per class into (validation, test), seeded."""
    if not 0 < fraction < 1:
        raise DomainError("validation fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    val_idx, test_idx = [], []
    for j in range(test.num_classes):
        pool = np.flatnonzero(test.labels == j)
        pool = rng.permutation(pool)
        k = int(round(fraction * pool.size))
        val_idx.append(pool[:k])
        test_idx.append(pool[k:])
    val_idx = np.concatenate(val_idx)
    test_idx = np.concatenate(test_idx)
    return (
        Dataset(test.features[val_idx].copy(), test.labels[val_idx].copy(), test.num_classes, "validation"),
        Dataset(test.features[test_idx].copy(), test.labels[test_idx].copy(), test.num_classes, "test"),
    )


# ---------------------------------------------------------------------------
# OOD pool with exact-duplicate exclusion
# ---------------------------------------------------------------------------


@dataclass
class OODPool:
    """Pre-sampled OOD rows, guaranteed digest-disjoint from the full train set."""

    features: np.ndarray
    excluded_digests: frozenset = field(repr=False)

    @property
    def n_pool(self) -> int:
        return int(self.features.shape[0])


def row_digests(features: np.ndarray) -> list:
    """Canonical per-row digests (sha256 of little-endian float64 bytes)."""
    rows = np.ascontiguousarray(np.asarray(features, dtype="<f8"))
    flat = rows.reshape(rows.shape[0], -1)
    return [hashlib.sha256(r.tobytes()).digest() for r in flat]


def build_ood_pool(ood_source: Dataset, d_full: Dataset, n: int, seed: int) -> OODPool:
    """Sample n OOD rows at random, excluding exact duplicates of d_full rows."""
    if n < 1:
        raise DomainError("pool size must be >= 1")
    full_digests = frozenset(row_digests(d_full.features))
    source_digests = row_digests(ood_source.features)
    survivors = np.array(
        [i for i, d in enumerate(source_digests) if d not in full_digests], dtype=np.int64
    )
    if survivors.size < n:
        raise CapacityError(
            f"only {survivors.size} OOD rows survive deduplication, {n} requested"
        )
    rng = np.random.default_rng(seed)
    picked = rng.choice(survivors, size=n, replace=False)
    return OODPool(ood_source.features[picked].copy(), full_digests)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def save_dataset(ds: Dataset, path) -> None:
    """Write the OEFS1 binary container (features as f32, labels as u16)."""
    feats = np.ascontiguousarray(ds.features, dtype="<f4")
    has_labels = ds.labels is not None
    dims = feats.shape[1:]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", feats.shape[0], ds.num_classes or 0))
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(struct.pack("<B", 1 if has_labels else 0))
        fh.write(feats.tobytes())
        if has_labels:
            if ds.labels.max(initial=0) >= 2**16:
                raise DomainError("labels exceed the u16 container range")
            fh.write(np.ascontiguousarray(ds.labels, dtype="<u2").tobytes())


def load_dataset(path, provenance: str = "full") -> Dataset:
    """Read an OEFS1 container; features come back as float64."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != MAGIC:
            raise DomainError(f"{path}: not an OEFS1 container (magic {magic!r})")
        n, k = struct.unpack("<II", fh.read(8))
        (ndims,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack(f"<{ndims}I", fh.read(4 * ndims))
        (has_labels,) = struct.unpack("<B", fh.read(1))
        count = n * int(np.prod(dims)) if ndims else n
        feats = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape((n, *dims))
        labels = None
        if has_labels:
            labels = np.frombuffer(fh.read(2 * n), dtype="<u2").astype(np.int64)
    return Dataset(feats.astype(float), labels, k if has_labels else None, provenance)


def import_csv(path, num_classes: int | None = None, provenance: str = "full") -> Dataset:
    """Load a small CSV fixture: one row per sample, label in the last column."""
    table = np.loadtxt(path, delimiter=",", ndmin=2)
    feats = table[:, :-1]
    labels = table[:, -1].astype(np.int64)
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(feats, labels, k, provenance)
