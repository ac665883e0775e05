"""Fine-tuning stage: cross-entropy on the few-sample set plus a weighted
regularization term on the auxiliary set, with best-snapshot early stopping.

The total objective is

    mean CE over the few-sample set
    + reg_weight * mean over aux of class_weight[label] * CE,

where the per-class weights are larger for minority classes (see
:func:`oodcompress.rebalance.regularization_weights`).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import Dataset
from .errors import DomainError, ShapeError
from .nn import Network


@dataclass(frozen=True)
class FinetuneConfig:
    """Fine-tuning hyperparameters; reg_weight = 0 disables the auxiliary term."""

    reg_weight: float = 2.5
    epochs: int = 120
    patience: int = 10
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.reg_weight < 0:
            raise DomainError("reg_weight must be nonnegative")
        if self.patience < 1:
            raise DomainError("patience must be >= 1")


def top1_accuracy(net: Network, ds: Dataset) -> float:
    """Fraction of samples whose argmax logit matches the label."""
    if ds.labels is None:
        raise DomainError("top-1 accuracy requires labels")
    logits = net.forward(ds.features)
    return float(np.mean(logits.argmax(axis=1) == ds.labels))


def regularization_loss(net: Network, d_aux: Dataset, class_weights: np.ndarray) -> float:
    """Mean over the auxiliary set of class_weights[label] * cross-entropy."""
    if d_aux is None or d_aux.n == 0:
        raise DomainError("the auxiliary set must be nonempty")
    w = np.asarray(class_weights, dtype=float)
    if w.shape != (d_aux.num_classes,):
        raise ShapeError(f"class_weights length {w.shape} does not match {d_aux.num_classes} classes")
    logits = net.forward(d_aux.features)
    loss, _ = nn.ce_loss_and_grad(logits, d_aux.labels, weights=w[d_aux.labels])
    return float(loss)


def total_loss(
    net: Network,
    d_few: Dataset,
    d_aux: Dataset | None,
    class_weights: np.ndarray,
    reg_weight: float,
) -> float:
    """Mean CE over the few-sample set plus reg_weight * regularization_loss."""
    loss, _ = finetune_objective(net, d_few, d_aux, class_weights, reg_weight)
    return loss


def finetune_objective(
    net: Network,
    d_few: Dataset,
    d_aux: Dataset | None,
    class_weights: np.ndarray,
    reg_weight: float,
):
    """Full-dataset fine-tuning loss and its parameter gradients."""
    if d_few is None or d_few.n == 0:
        raise DomainError("the few-sample set must be nonempty")
    logits, trace = net.forward(d_few.features, record=True)
    loss, dlogits = nn.ce_loss_and_grad(logits, d_few.labels)
    grads = net.backward(trace, dlogits)
    if reg_weight > 0:
        if d_aux is None or d_aux.n == 0:
            raise DomainError("reg_weight > 0 requires a nonempty auxiliary set")
        w = np.asarray(class_weights, dtype=float)
        aux_logits, aux_trace = net.forward(d_aux.features, record=True)
        reg, aux_dlogits = nn.ce_loss_and_grad(aux_logits, d_aux.labels, weights=w[d_aux.labels])
        loss += reg_weight * reg
        for g, ag in zip(grads, net.backward(aux_trace, aux_dlogits)):
            for name in ag:
                g[name] += reg_weight * ag[name]
    return float(loss), grads


def finetune(
    student: Network,
    d_few: Dataset,
    d_aux: Dataset | None,
    class_weights: np.ndarray,
    cfg: FinetuneConfig,
    validation: Dataset,
    val_metric=None,
):
    """Mini-batch SGD on the regularized objective with early stopping.

    After every epoch the validation metric (top-1 by default; injectable for
    testing) is recorded; training stops once it has not improved for
    cfg.patience epochs or the epoch cap is reached. Returns the
    best-validation snapshot and the epoch log
    [{epoch, train_loss, reg_loss, val_top1}, ...].
    """
    if d_few is None or d_few.n == 0:
        raise DomainError("the few-sample set must be nonempty")
    if validation is None or validation.n == 0:
        raise DomainError("a nonempty validation set is required")
    use_aux = cfg.reg_weight > 0
    if use_aux and (d_aux is None or d_aux.n == 0):
        raise DomainError("reg_weight > 0 requires a nonempty auxiliary set")
    if val_metric is None:
        val_metric = top1_accuracy
    w = np.asarray(class_weights, dtype=float)

    net = student.copy(role="student")
    opt = nn.SgdOptimizer(net, cfg.learning_rate, cfg.momentum)
    rng_few = np.random.default_rng([cfg.seed, 21])
    rng_aux = np.random.default_rng([cfg.seed, 23])

    def batches(perm, size):
        return [perm[s : s + size] for s in range(0, len(perm), size)]

    log = []
    best_metric = -np.inf
    best_params = None
    since_best = 0
    for epoch in range(cfg.epochs):
        few_batches = batches(rng_few.permutation(d_few.n), cfg.batch_size)
        aux_batches = batches(rng_aux.permutation(d_aux.n), cfg.batch_size) if use_aux else []
        train_losses, reg_losses = [], []
        for t, idx in enumerate(few_batches):
            logits, trace = net.forward(d_few.features[idx], record=True)
            loss, dlogits = nn.ce_loss_and_grad(logits, d_few.labels[idx])
            grads = net.backward(trace, dlogits)
            train_losses.append(loss)
            if use_aux:
                aidx = aux_batches[t % len(aux_batches)]
                a_logits, a_trace = net.forward(d_aux.features[aidx], record=True)
                reg, a_dlogits = nn.ce_loss_and_grad(
                    a_logits, d_aux.labels[aidx], weights=w[d_aux.labels[aidx]]
                )
                reg_losses.append(reg)
                for g, ag in zip(grads, net.backward(a_trace, a_dlogits)):
                    for name in ag:
                        g[name] += cfg.reg_weight * ag[name]
            opt.step(net, grads)
        metric = float(val_metric(net, validation))
        log.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(train_losses)),
                "reg_loss": float(np.mean(reg_losses)) if reg_losses else 0.0,
                "val_top1": metric,
            }
        )
        if metric > best_metric:
            best_metric = metric
            best_params = [{k: v.copy() for k, v in p.items()} for p in net.params]
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    best = Network(net.specs, net.input_shape, role="student", params=best_params)
    return best, log


def write_epoch_log(log, path) -> None:
    """Serialize the epoch log to CSV (epoch, train_loss, reg_loss, val_top1)."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "reg_loss", "val_top1"])
        writer.writeheader()
        writer.writerows(log)
