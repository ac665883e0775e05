"""Command-line interface.

Subcommands mirror the pipeline stages plus batch drivers:

    teacher-train   build datasets, train the teacher, save workspace files
    sample          draw the long-tailed subset and the deduplicated OOD pool
    compress        score channels, prune, and jointly distill the student
    finetune        regularized fine-tuning with early stopping, then evaluate
    experiment      all configured variants x runs -> report.csv / report.json
    sweep           vary lambda, eta, or m_aux with shared seeds
    verify-theorem1 brute-force Bayes-invariance measurement -> JSON
    report          print aggregate lines from an existing report.json

Shared flags: --config PATH (flat key = value file), --seed N, --variant NAME,
--out DIR, --jobs N; command-line flags override config-file values. Exit
codes: 0 success, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bayes, compress, data, finetune, harness, rebalance
from .errors import ConfigError, NumericError
from .nn import Network


def _add_common(parser):
    parser.add_argument("--config", help="path to a flat key = value config file")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--variant", help="variant override")
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--jobs", type=int, help="parallel worker count override")


def _load_config(args) -> harness.ExperimentConfig:
    overrides = {}
    for key in ("seed", "variant", "out", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return harness.load_config(args.config, overrides)


def _outdir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _workspace_seed(cfg) -> int:
    # stage commands operate on run index 0 of the configured master seed
    return harness.run_seed(cfg.seed, 0)


def cmd_teacher_train(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    seed = _workspace_seed(cfg)
    d_full, validation, test, teacher = harness._world(cfg, seed)
    data.save_dataset(d_full, out / "d_full.ds")
    data.save_dataset(validation, out / "val.ds")
    data.save_dataset(test, out / "test.ds")
    teacher.save(out / "teacher.npz")
    top1 = harness.evaluate(teacher, test).top1
    print(f"teacher trained: {teacher.param_count()} params, test top1 {top1:.4f}")
    print(f"workspace written to {out}")
    return 0


def cmd_sample(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    seed = _workspace_seed(cfg)
    d_full = data.load_dataset(out / "d_full.ds", provenance="full")
    plan = data.long_tail_counts(cfg.K, cfg.rho, cfg.n_max)
    stage = harness.resolve_stage_plan(cfg, cfg.variant)
    counts = data.balanced_counts(cfg.K, plan.total) if stage.balanced else np.asarray(plan.counts)
    d_few = data.subsample(d_full, counts, harness.stage_seed(seed, "sample"))
    pool = harness._build_pool(cfg, d_full, seed)
    data.save_dataset(d_few, out / "d_few.ds")
    data.save_dataset(
        data.Dataset(pool.features, None, None, provenance="ood-pool"), out / "ood_pool.ds"
    )
    print(f"few-sample subset: counts {list(d_few.class_counts)} (total {d_few.n})")
    print(f"OOD pool: {pool.n_pool} rows, deduplicated against d_full")
    return 0


def cmd_compress(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    seed = _workspace_seed(cfg)
    stage = harness.resolve_stage_plan(cfg, cfg.variant)
    teacher = Network.load(out / "teacher.npz")
    d_few = data.load_dataset(out / "d_few.ds", provenance="few")
    pool_ds = data.load_dataset(out / "ood_pool.ds", provenance="ood-pool")
    d_full = data.load_dataset(out / "d_full.ds", provenance="full")
    pool = data.OODPool(pool_ds.features, frozenset(data.row_digests(d_full.features)))

    prior = rebalance.class_prior(d_few.class_counts)
    dist = rebalance.complementary_distribution(prior)
    m_aux = harness.resolve_m_aux(cfg, d_few.n, prior)
    d_aux = rebalance.assign_ood_labels(pool, dist, m_aux, harness.stage_seed(seed, "aux-labels"))
    data.save_dataset(d_aux, out / "d_aux.ds")

    imp_data = d_few
    if stage.importance_source == "mixture" and d_aux.n > 0:
        imp_data = data.Dataset(
            np.concatenate([d_few.features, d_aux.features]),
            np.concatenate([d_few.labels, d_aux.labels]),
            cfg.K, provenance="few",
        )
    importance = compress.per_class_importance(teacher, imp_data)
    weights = compress.frequency_weights(d_few.class_counts, stage.weight_mode)
    scores = compress.aggregate_scores(importance, weights)
    prune_plan = compress.select_prune(scores, cfg.prune_ratio)
    student = compress.apply_prune(teacher, prune_plan)
    dcfg = compress.DistillationConfig(
        few_weight=stage.few_weight, temperature=cfg.temperature,
        epochs=cfg.distill_epochs, batch_size=cfg.distill_batch,
        learning_rate=cfg.distill_lr, momentum=cfg.momentum,
        seed=harness.stage_seed(seed, "distill"),
    )
    distilled, history = compress.joint_distill(
        teacher, student, d_few, d_aux if stage.few_weight < 1 else None, dcfg
    )
    distilled.save(out / "student_distilled.npz")
    with open(out / "compress.json", "w") as fh:
        json.dump(
            {
                "pruning_plan": prune_plan.to_json(),
                "params_before": teacher.param_count(),
                "params_after": distilled.param_count(),
                "class_prior": [float(v) for v in prior.weights],
                "complementary_rates": [float(v) for v in dist.rates],
                "class_weights": [float(v) for v in weights],
                "m_aux": m_aux,
                "final_loss": history[-1]["total"] if history else None,
            },
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    print(
        f"pruned {teacher.param_count()} -> {distilled.param_count()} params; "
        f"distilled for {cfg.distill_epochs} epochs"
    )
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    seed = _workspace_seed(cfg)
    stage = harness.resolve_stage_plan(cfg, cfg.variant)
    student = Network.load(out / "student_distilled.npz")
    d_few = data.load_dataset(out / "d_few.ds", provenance="few")
    validation = data.load_dataset(out / "val.ds", provenance="validation")
    test = data.load_dataset(out / "test.ds", provenance="test")
    d_aux = None
    if stage.use_aux_finetune:
        d_aux = data.load_dataset(out / "d_aux.ds", provenance="auxiliary")
    dist = rebalance.complementary_distribution(rebalance.class_prior(d_few.class_counts))
    reg_weights = rebalance.regularization_weights(dist)
    fcfg = finetune.FinetuneConfig(
        reg_weight=stage.reg_weight, epochs=cfg.finetune_epochs, patience=cfg.patience,
        batch_size=cfg.finetune_batch, learning_rate=cfg.finetune_lr,
        momentum=cfg.momentum, seed=harness.stage_seed(seed, "finetune"),
    )
    final, log = finetune.finetune(student, d_few, d_aux, reg_weights, fcfg, validation)
    final.save(out / "student_final.npz")
    finetune.write_epoch_log(log, out / "finetune_epochs.csv")
    result = harness.evaluate(final, test)
    with open(out / "eval.json", "w") as fh:
        json.dump({"top1": result.top1, "recalls": result.recalls}, fh, indent=2)
        fh.write("\n")
    print(f"fine-tuned for {len(log)} epochs; test top1 {result.top1:.4f}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    report = harness.run_experiment(cfg)
    harness.write_report_csv(report, out / "report.csv")
    harness.write_report_json(report, out / "report.json")
    print(harness.format_aggregates(report))
    print(f"report written to {out / 'report.csv'} and {out / 'report.json'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values must list at least one value")
    report = harness.sweep(cfg, args.param, values)
    harness.write_report_csv(report, out / "report.csv")
    harness.write_report_json(report, out / "report.json")
    print(harness.format_aggregates(report))
    return 0


def cmd_verify_theorem1(args) -> int:
    cfg = _load_config(args) if (args.config or args.out or args.seed is not None) else None
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    result = bayes.theorem1_check(args.trials, seed)
    payload = {
        "trials": result["trials"],
        "uniform_shift_rate": result["uniform_shift_rate"],
        "complementary_shift_rate": result["complementary_shift_rate"],
        "max_posterior_perturbation": result["max_posterior_perturbation"],
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if cfg is not None and cfg.out:
        out = _outdir(cfg)
        (out / "theorem1.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_report(args) -> int:
    cfg = _load_config(args)
    path = Path(cfg.out) / "report.json"
    if not path.exists():
        raise ConfigError(f"no report at {path}; run `experiment` first")
    payload = json.loads(path.read_text())
    for variant, agg in payload["aggregates"].items():
        print(
            f"{variant:<28} runs={agg['runs']}  top1={agg['top1_mean']:.4f}"
            f"±{agg['top1_std']:.4f}  head={agg['head_recall_mean']:.4f}"
            f"  tail={agg['tail_recall_mean']:.4f}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodcompress",
        description="Few-sample model compression under class imbalance, "
        "rebalanced with OOD auxiliary data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "teacher-train": cmd_teacher_train,
        "sample": cmd_sample,
        "compress": cmd_compress,
        "finetune": cmd_finetune,
        "experiment": cmd_experiment,
        "report": cmd_report,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(fn=fn)
    p = sub.add_parser("sweep")
    _add_common(p)
    p.add_argument("--param", required=True, choices=harness.SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma-separated value list")
    p.set_defaults(fn=cmd_sweep)
    p = sub.add_parser("verify-theorem1")
    _add_common(p)
    p.add_argument("--trials", type=int, default=1000)
    p.set_defaults(fn=cmd_verify_theorem1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
