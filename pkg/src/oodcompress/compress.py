"""Compression stage: class-aware channel scoring, structural pruning, and
joint distillation of the pruned student on few-sample plus auxiliary data.

Channel importance is the mean absolute post-activation of each channel
(spatially averaged for conv layers), split per class; per-channel scores are
a class-weighted sum of that matrix. Weighting each class by its relative
frequency reproduces the plain frequency-weighted score; the default
inverse-frequency mode protects channels that only fire on rare classes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .data import Dataset
from .errors import CapacityError, DomainError, ShapeError
from .nn import Network

WEIGHT_MODES = ("frequency", "inverse-frequency")


@dataclass
class ChannelImportance:
    """Per-layer [channels, classes] matrices of nonnegative importance scores."""

    per_layer: dict  # layer index -> np.ndarray [C_l, K]

    def layers(self):
        return sorted(self.per_layer)


@dataclass(frozen=True)
class PruningPlan:
    """Channel indices to remove per prunable layer, at target ratio `ratio`."""

    removed: dict  # layer index -> tuple of sorted channel indices
    ratio: float

    def to_json(self) -> dict:
        return {"ratio": self.ratio, "removed": {str(i): list(v) for i, v in sorted(self.removed.items())}}


@dataclass(frozen=True)
class DistillationConfig:
    """Hyperparameters of the joint distillation loss and its training loop.

    few_weight balances the few-sample term against the auxiliary term
    (1.0 ignores auxiliary data entirely, 0.0 ignores the few-sample set).
    """

    few_weight: float = 0.5
    temperature: float = 1.0
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.few_weight <= 1.0:
            raise DomainError("few_weight must lie in [0, 1]")
        if self.temperature <= 0:
            raise DomainError("temperature must be positive")


def prunable_layers(net: Network) -> list:
    """Indices of conv/dense layers eligible for pruning (the head never is)."""
    return [i for i, s in enumerate(net.specs) if s.kind in nn.PRUNABLE_KINDS]


def _channel_stats(act: np.ndarray) -> np.ndarray:
    """Per-sample mean absolute activation per channel: [n, C]."""
    a = np.abs(act)
    if a.ndim == 2:
        return a
    if a.ndim == 4:
        return a.mean(axis=(2, 3))
    raise ShapeError(f"unsupported activation rank {a.ndim}")


def per_class_importance(net: Network, data: Dataset) -> ChannelImportance:
    """Importance matrix s[k, j]: mean absolute post-activation of channel k
    over class-j samples (zero rows for unrepresented classes).

    The post-activation of a prunable layer is the output of the relu that
    immediately follows it, or the layer's own output when none does.
    """
    if data.labels is None:
        raise DomainError("importance scoring requires labeled data")
    _, trace = net.forward(data.features, record=True)
    k = data.num_classes
    result = {}
    for i in prunable_layers(net):
        act_index = i + 1
        if i + 1 < len(net.specs) and net.specs[i + 1].kind == "relu":
            act_index = i + 2
        stats = _channel_stats(trace.activations[act_index])  # [n, C]
        table = np.zeros((stats.shape[1], k))
        for j in range(k):
            rows = data.labels == j
            if rows.any():
                table[:, j] = stats[rows].mean(axis=0)
        result[i] = table
    return ChannelImportance(result)


def frequency_weights(counts, mode: str = "inverse-frequency") -> np.ndarray:
    """Class weights from sample counts, normalized to sum 1.

    "frequency" weights classes by their relative frequency m_j / M (the plain
    weighting that lets majority classes dominate); "inverse-frequency" (the
    default) weights by 1 / m_j so rare classes count more.
    """
    m = np.asarray(counts, dtype=float)
    if mode not in WEIGHT_MODES:
        raise DomainError(f"unknown weight mode {mode!r}; choose from {WEIGHT_MODES}")
    if m.sum() < 1:
        raise DomainError("at least one sample is required")
    if mode == "frequency":
        w = m
    else:
        if np.any(m < 1):
            raise DomainError("inverse-frequency weighting requires every class count >= 1")
        w = 1.0 / m
    return w / w.sum()


def aggregate_scores(imp: ChannelImportance, weights: np.ndarray) -> dict:
    """Per-layer channel scores: the class-weighted sum of the importance matrix.

    With weights m_j / M this is exactly the frequency-weighted score.
    """
    w = np.asarray(weights, dtype=float)
    scores = {}
    for i, table in imp.per_layer.items():
        if table.shape[1] != w.shape[0]:
            raise ShapeError(
                f"layer {i}: importance covers {table.shape[1]} classes, weights cover {w.shape[0]}"
            )
        scores[i] = table @ w
    return scores


def select_prune(scores: dict, ratio: float) -> PruningPlan:
    """Mark the floor(ratio * C_l) lowest-scoring channels of each layer.

    Ties break toward the lower channel index. Every layer keeps at least one
    channel; ratio 0 yields an empty plan.
    """
    if not 0.0 <= ratio < 1.0:
        raise DomainError("pruning ratio must lie in [0, 1)")
    removed = {}
    for i, s in scores.items():
        c = s.shape[0]
        k = int(np.floor(ratio * c))
        if k >= c:
            raise CapacityError(f"layer {i}: pruning {k} of {c} channels would empty it")
        if k == 0:
            continue
        order = np.argsort(s, kind="stable")  # stable: ties keep index order
        removed[i] = tuple(sorted(int(ch) for ch in order[:k]))
    return PruningPlan(removed, float(ratio))


def _keep_indices(total: int, removed) -> np.ndarray:
    removed = set(removed)
    for ch in removed:
        if not 0 <= ch < total:
            raise ShapeError(f"channel {ch} out of range for {total} channels")
    if len(removed) >= total:
        raise CapacityError(f"plan removes all {total} channels of a layer")
    return np.array([c for c in range(total) if c not in removed], dtype=np.int64)


def apply_prune(net: Network, plan: PruningPlan) -> Network:
    """Structurally remove the planned channels, returning a student network.

    Surviving weights are copied verbatim; the consuming layer's input slices
    are removed consistently (through relu/max-pool/flatten). The softmax head
    is never a pruning target.
    """
    for i in plan.removed:
        if i >= len(net.specs) or net.specs[i].kind not in nn.PRUNABLE_KINDS:
            raise ShapeError(f"plan targets layer {i}, which is not prunable")

    # Per-layer output channel keep-lists; None means untouched.
    out_keep = {}
    for i, spec in enumerate(net.specs):
        if i in plan.removed:
            width = spec.out_channels if spec.kind == "conv2d" else spec.out_features
            out_keep[i] = _keep_indices(width, plan.removed[i])

    new_specs = []
    new_params = []
    keep = None  # indices kept in the tensor flowing into the current layer
    pending_spatial = None  # set after flatten: flat slots spanned per kept channel
    for i, spec in enumerate(net.specs):
        in_shape = net.shapes[i - 1] if i > 0 else net.input_shape
        p = net.params[i]
        if spec.kind == "conv2d":
            if pending_spatial is not None:
                raise ShapeError(f"layer {i} (conv2d): cannot consume flattened pruned channels")
            w, b = p["W"], p["b"]
            if keep is not None:
                w = w[:, keep]
            kept = out_keep.get(i)
            if kept is not None:
                w, b = w[kept], b[kept]
            new_specs.append(replace(spec, in_channels=w.shape[1], out_channels=w.shape[0]))
            new_params.append({"W": w.copy(), "b": b.copy()})
            keep = kept
        elif spec.kind in ("dense", "softmax-head"):
            w, b = p["W"], p["b"]
            if keep is not None:
                if pending_spatial is None:
                    rows = keep
                else:
                    # input came through flatten: expand the channel keep-list
                    # to flat indices using the pre-flatten spatial extent
                    rows = (keep[:, None] * pending_spatial + np.arange(pending_spatial)[None, :]).ravel()
                w = w[rows]
            kept = out_keep.get(i)
            if kept is not None:
                w, b = w[:, kept], b[kept]
            new_specs.append(replace(spec, in_features=w.shape[0], out_features=w.shape[1]))
            new_params.append({"W": w.copy(), "b": b.copy()})
            keep = kept
            pending_spatial = None
        elif spec.kind == "flatten":
            new_specs.append(spec)
            new_params.append({})
            if keep is not None and pending_spatial is None:
                pending_spatial = int(np.prod(in_shape[1:]))
        else:  # relu, max-pool: channel-preserving
            new_specs.append(spec)
            new_params.append({})
    return Network(new_specs, net.input_shape, role="student", params=new_params)


# ---------------------------------------------------------------------------
# Joint distillation
# ---------------------------------------------------------------------------


def kd_objective(
    teacher: Network,
    student: Network,
    d_few: Dataset | None,
    d_aux: Dataset | None,
    few_weight: float,
    temperature: float = 1.0,
):
    """Full-dataset joint distillation loss and its student-parameter gradients.

    loss = few_weight * KD(few) + (1 - few_weight) * KD(aux); terms with zero
    weight (or absent datasets at the corresponding boundary) are skipped.
    """
    grads = [{k: np.zeros_like(v) for k, v in p.items()} for p in student.params]
    loss = 0.0

    def accumulate(ds, weight):
        nonlocal loss
        t_logits = teacher.forward(ds.features)
        s_logits, trace = student.forward(ds.features, record=True)
        term, dlogits = nn.kd_loss_and_grad(t_logits, s_logits, temperature)
        loss += weight * term
        for layer, g in enumerate(student.backward(trace, dlogits)):
            for name, arr in g.items():
                grads[layer][name] += weight * arr

    if few_weight > 0.0:
        if d_few is None or d_few.n == 0:
            raise DomainError("joint distillation requires a nonempty few-sample set")
        accumulate(d_few, few_weight)
    if few_weight < 1.0:
        if d_aux is None or d_aux.n == 0:
            raise DomainError("few_weight < 1 requires a nonempty auxiliary set")
        accumulate(d_aux, 1.0 - few_weight)
    return loss, grads


def joint_distill(
    teacher: Network,
    student: Network,
    d_few: Dataset,
    d_aux: Dataset | None,
    cfg: DistillationConfig,
):
    """Train the student to match the teacher's output distribution on the
    few-sample set and (weighted by 1 - few_weight) on the auxiliary set.

    Returns (trained student copy, per-epoch loss history). Deterministic per
    cfg.seed; the auxiliary batch stream is independent of the few-sample one,
    so the few_weight = 1 boundary is exactly plain distillation.
    """
    lam = cfg.few_weight
    if d_few is None or d_few.n == 0:
        raise DomainError("joint distillation requires a nonempty few-sample set")
    if lam < 1.0 and (d_aux is None or d_aux.n == 0):
        raise DomainError("few_weight < 1 requires a nonempty auxiliary set")
    if teacher.num_classes != student.num_classes:
        raise ShapeError("teacher and student must share the output dimension")

    out = student.copy(role="student")
    opt = nn.SgdOptimizer(out, cfg.learning_rate, cfg.momentum)
    rng_few = np.random.default_rng([cfg.seed, 11])
    rng_aux = np.random.default_rng([cfg.seed, 13])
    teacher_logits_few = teacher.forward(d_few.features) if lam > 0 else None
    teacher_logits_aux = teacher.forward(d_aux.features) if lam < 1 else None

    def batches(perm, size):
        return [perm[s : s + size] for s in range(0, len(perm), size)]

    history = []
    for epoch in range(cfg.epochs):
        few_batches = batches(rng_few.permutation(d_few.n), cfg.batch_size) if lam > 0 else []
        aux_batches = batches(rng_aux.permutation(d_aux.n), cfg.batch_size) if lam < 1 else []
        steps = len(few_batches) if lam > 0 else len(aux_batches)
        for t in range(steps):
            grads = None
            if lam > 0:
                idx = few_batches[t]
                s_logits, trace = out.forward(d_few.features[idx], record=True)
                _, dlogits = nn.kd_loss_and_grad(teacher_logits_few[idx], s_logits, cfg.temperature)
                grads = out.backward(trace, dlogits)
                for g in grads:
                    for name in g:
                        g[name] *= lam
            if lam < 1:
                idx = aux_batches[t % len(aux_batches)]
                s_logits, trace = out.forward(d_aux.features[idx], record=True)
                _, dlogits = nn.kd_loss_and_grad(teacher_logits_aux[idx], s_logits, cfg.temperature)
                aux_grads = out.backward(trace, dlogits)
                if grads is None:
                    grads = aux_grads
                    for g in grads:
                        for name in g:
                            g[name] *= 1.0 - lam
                else:
                    for g, ag in zip(grads, aux_grads):
                        for name in g:
                            g[name] += (1.0 - lam) * ag[name]
            opt.step(out, grads)
        few_term = _mean_kd(teacher_logits_few, out, d_few, cfg.temperature) if lam > 0 else 0.0
        aux_term = _mean_kd(teacher_logits_aux, out, d_aux, cfg.temperature) if lam < 1 else 0.0
        history.append(
            {
                "epoch": epoch,
                "few_kd": few_term,
                "ood_kd": aux_term,
                "total": lam * few_term + (1.0 - lam) * aux_term,
            }
        )
    return out, history


def _mean_kd(teacher_logits, net, ds, temperature):
    loss, _ = nn.kd_loss_and_grad(teacher_logits, net.forward(ds.features), temperature)
    return float(loss)
