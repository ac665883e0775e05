"""Config-driven experiment harness: teacher training, long-tail sampling,
compression, fine-tuning, evaluation, ablation variants, and sweeps, with
deterministic seeding and CSV/JSON reports.

Variants:
    full               both stages use auxiliary OOD data.
    wo-comp            compression reverts to frequency weighting and plain
                       distillation; fine-tuning keeps the auxiliary term.
    wo-ft              compression keeps OOD data; fine-tuning drops it.
    wo-all             both reversions (the uncorrected baseline).
    balanced-baseline  wo-all pipeline on a balanced subsample of equal total size.

Per-run seeds derive from (master seed, run index) only, so variants are
paired run-for-run and composing the two ablations reproduces wo-all exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import compress, data, finetune, nn, rebalance
from .errors import CapacityError, ConfigError, DomainError
from .nn import Network

VARIANTS = ("full", "wo-comp", "wo-ft", "wo-all", "balanced-baseline")
SWEEP_PARAMS = ("lambda", "eta", "m_aux")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of the pipeline; defaults define the standard toy fixture."""

    # synthetic data (ignored when explicit dataset paths are given)
    K: int = 10
    dim: int = 16
    separation: float = 4.0
    per_class: int = 100
    test_per_class: int = 60
    val_fraction: float = 0.2
    dataset_train_path: str = ""
    dataset_test_path: str = ""
    ood_path: str = ""

    # few-sample subset
    rho: float = 100.0
    n_max: int = 10

    # OOD pool and auxiliary set
    ood_pool_size: int = 500
    ood_shift: float = 6.0
    ood_separation: float = 4.0
    ood_clusters: int = 6
    m_aux: str = "match"  # "match", "uniform", or a nonnegative integer

    # teacher
    hidden_sizes: str = "48,32"
    teacher_epochs: int = 30
    teacher_batch: int = 32
    teacher_lr: float = 0.05

    # compression stage
    prune_ratio: float = 0.5
    weight_mode: str = "inverse-frequency"
    importance_source: str = "mixture"
    lambda_: float = 0.5
    temperature: float = 1.0
    distill_epochs: int = 60
    distill_batch: int = 16
    distill_lr: float = 0.05

    # fine-tuning stage
    eta: float = 2.5
    finetune_epochs: int = 150
    finetune_batch: int = 16
    finetune_lr: float = 0.02
    patience: int = 15

    momentum: float = 0.9

    # experiment control
    variant: str = "full"
    variants: tuple = VARIANTS
    seed: int = 0
    runs: int = 5
    out: str = "runs/out"
    jobs: int = 1


_KEY_TO_ATTR = {"lambda": "lambda_"}
_ATTR_TO_KEY = {v: k for k, v in _KEY_TO_ATTR.items()}

_INT_KEYS = {
    "K", "dim", "per_class", "test_per_class", "n_max", "ood_pool_size", "ood_clusters",
    "teacher_epochs", "teacher_batch", "distill_epochs", "distill_batch",
    "finetune_epochs", "finetune_batch", "patience", "seed", "runs", "jobs",
}
_FLOAT_KEYS = {
    "separation", "val_fraction", "rho", "ood_shift", "ood_separation", "prune_ratio",
    "lambda", "temperature", "distill_lr", "finetune_lr", "eta", "teacher_lr", "momentum",
}
_STR_KEYS = {
    "dataset_train_path", "dataset_test_path", "ood_path", "m_aux", "hidden_sizes",
    "weight_mode", "importance_source", "variant", "out",
}


def config_keys() -> tuple:
    """Documented config-file keys, in schema order."""
    keys = []
    for f in fields(ExperimentConfig):
        keys.append(_ATTR_TO_KEY.get(f.name, f.name))
    return tuple(keys)


def _cast(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key == "variants":
            names = tuple(v.strip() for v in raw.split(",") if v.strip())
            return names
        if key in _STR_KEYS:
            return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from exc
    raise ConfigError(f"unknown config key {key!r}")


def parse_config_file(path) -> dict:
    """Parse the flat key = value format ('#' starts a comment)."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in config_keys():
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _cast(key, raw)
    return values


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a validated config from an optional file plus overrides (which win)."""
    values = parse_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if key not in config_keys():
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _cast(key, str(value)) if isinstance(value, str) else value
    cfg = ExperimentConfig(**{_KEY_TO_ATTR.get(k, k): v for k, v in values.items()})
    validate_config(cfg)
    return cfg


def hidden_sizes(cfg: ExperimentConfig) -> tuple:
    try:
        sizes = tuple(int(tok) for tok in cfg.hidden_sizes.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"hidden_sizes: cannot parse {cfg.hidden_sizes!r}") from exc
    if not sizes or any(s < 1 for s in sizes):
        raise ConfigError("hidden_sizes must list positive integers")
    return sizes


def resolve_m_aux(cfg: ExperimentConfig, m_few: int, prior: rebalance.ClassPrior) -> int:
    """Turn the m_aux config value into a concrete count for a given subset."""
    if cfg.m_aux == "match":
        return m_few
    if cfg.m_aux == "uniform":
        return int(round(rebalance.uniformizing_aux_size(prior, m_few)))
    try:
        value = int(cfg.m_aux)
    except ValueError as exc:
        raise ConfigError(f"m_aux must be an integer, 'match' or 'uniform', got {cfg.m_aux!r}") from exc
    if value < 0:
        raise ConfigError("m_aux must be nonnegative")
    return value


def validate_config(cfg: ExperimentConfig) -> None:
    """Reject out-of-domain values before any compute."""
    checks = [
        (cfg.K >= 2, "K must be >= 2"),
        (cfg.dim >= 2, "dim must be >= 2"),
        (cfg.separation >= 0, "separation must be nonnegative"),
        (cfg.per_class >= 1, "per_class must be >= 1"),
        (cfg.test_per_class >= 2, "test_per_class must be >= 2"),
        (0 < cfg.val_fraction < 1, "val_fraction must lie in (0, 1)"),
        (cfg.rho >= 1, "rho must be >= 1"),
        (cfg.n_max >= 1, "n_max must be >= 1"),
        (cfg.n_max <= cfg.per_class, "n_max cannot exceed per_class"),
        (cfg.ood_pool_size >= 1, "ood_pool_size must be >= 1"),
        (cfg.ood_shift >= 0, "ood_shift must be nonnegative"),
        (cfg.ood_separation >= 0, "ood_separation must be nonnegative"),
        (cfg.ood_clusters >= 1, "ood_clusters must be >= 1"),
        (0 <= cfg.prune_ratio < 1, "prune_ratio must lie in [0, 1)"),
        (cfg.weight_mode in compress.WEIGHT_MODES, f"weight_mode must be one of {compress.WEIGHT_MODES}"),
        (cfg.importance_source in ("mixture", "few"), "importance_source must be 'mixture' or 'few'"),
        (0 <= cfg.lambda_ <= 1, "lambda must lie in [0, 1]"),
        (cfg.temperature > 0, "temperature must be positive"),
        (cfg.eta >= 0, "eta must be nonnegative"),
        (cfg.patience >= 1, "patience must be >= 1"),
        (cfg.momentum >= 0 and cfg.momentum < 1, "momentum must lie in [0, 1)"),
        (cfg.teacher_epochs >= 1, "teacher_epochs must be >= 1"),
        (cfg.distill_epochs >= 0, "distill_epochs must be nonnegative"),
        (cfg.finetune_epochs >= 1, "finetune_epochs must be >= 1"),
        (cfg.teacher_batch >= 1 and cfg.distill_batch >= 1 and cfg.finetune_batch >= 1,
         "batch sizes must be >= 1"),
        (cfg.teacher_lr > 0 and cfg.distill_lr > 0 and cfg.finetune_lr > 0,
         "learning rates must be positive"),
        (cfg.variant in VARIANTS, f"variant must be one of {VARIANTS}"),
        (all(v in VARIANTS for v in cfg.variants), f"variants must come from {VARIANTS}"),
        (len(cfg.variants) >= 1, "variants must be nonempty"),
        (cfg.runs >= 1, "runs must be >= 1"),
        (cfg.jobs >= 1, "jobs must be >= 1"),
    ]
    problems = [msg for ok, msg in checks if not ok]
    if problems:
        raise ConfigError("; ".join(problems))
    hidden_sizes(cfg)
    # plan-level feasibility is deterministic, so check it now
    plan = data.long_tail_counts(cfg.K, cfg.rho, cfg.n_max)
    for name in set(cfg.variants) | {cfg.variant}:
        counts = data.balanced_counts(cfg.K, plan.total) if name == "balanced-baseline" else plan.counts
        if max(counts) > cfg.per_class:
            raise ConfigError(
                f"variant {name!r} needs {max(counts)} samples in some class, "
                f"but per_class is {cfg.per_class}"
            )
        prior = rebalance.class_prior(np.asarray(counts, dtype=float))
        m_aux = resolve_m_aux(cfg, plan.total, prior)
        if m_aux > cfg.ood_pool_size:
            raise ConfigError(
                f"variant {name!r} resolves m_aux to {m_aux}, exceeding the OOD pool "
                f"size {cfg.ood_pool_size}"
            )


def config_echo(cfg: ExperimentConfig) -> dict:
    """Config as a JSON-friendly dict under its schema key names."""
    echo = {}
    for f in fields(ExperimentConfig):
        key = _ATTR_TO_KEY.get(f.name, f.name)
        value = getattr(cfg, f.name)
        echo[key] = list(value) if isinstance(value, tuple) else value
    return echo


# ---------------------------------------------------------------------------
# Seeding and caching
# ---------------------------------------------------------------------------


def _stable_hash(*parts) -> int:
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def run_seed(master_seed: int, run_index: int) -> int:
    """Per-run seed; variant-independent so variants are paired per run."""
    return _stable_hash("run", master_seed, run_index)


def stage_seed(seed: int, stage: str) -> int:
    """Independent per-stage RNG stream within one run."""
    return _stable_hash("stage", seed, stage)


_CACHE: dict = {}


def clear_cache() -> None:
    """Drop memoized teachers and compression artifacts (results are pure)."""
    _CACHE.clear()


def _cached(key, builder):
    if key not in _CACHE:
        _CACHE[key] = builder()
    return _CACHE[key]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    """Top-1 accuracy plus per-class recall (None when a class is absent)."""

    top1: float
    recalls: list

    def mean_recall(self, class_indices) -> float:
        vals = [self.recalls[j] for j in class_indices if self.recalls[j] is not None]
        return float(np.mean(vals)) if vals else float("nan")


def evaluate(net: Network, test: data.Dataset) -> EvalResult:
    """Deterministic top-1 and per-class recall on a labeled test set."""
    if test.labels is None or test.n == 0:
        raise DomainError("evaluation requires a nonempty labeled test set")
    pred = net.forward(test.features).argmax(axis=1)
    top1 = float(np.mean(pred == test.labels))
    recalls = []
    for j in range(test.num_classes):
        mask = test.labels == j
        recalls.append(float(np.mean(pred[mask] == j)) if mask.any() else None)
    return EvalResult(top1, recalls)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StagePlan:
    """Resolved per-variant execution switches."""

    balanced: bool
    weight_mode: str
    importance_source: str
    few_weight: float
    use_aux_finetune: bool
    reg_weight: float


def resolve_stage_plan(cfg: ExperimentConfig, variant: str) -> StagePlan:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    ood_compress = variant in ("full", "wo-ft")
    ood_finetune = variant in ("full", "wo-comp")
    return StagePlan(
        balanced=(variant == "balanced-baseline"),
        weight_mode=cfg.weight_mode if ood_compress else "frequency",
        importance_source=cfg.importance_source if ood_compress else "few",
        few_weight=cfg.lambda_ if ood_compress else 1.0,
        use_aux_finetune=ood_finetune,
        reg_weight=cfg.eta if ood_finetune else 0.0,
    )


def _data_key(cfg: ExperimentConfig, seed: int) -> tuple:
    return (
        "world", cfg.K, cfg.dim, cfg.separation, cfg.per_class, cfg.test_per_class,
        cfg.val_fraction, cfg.dataset_train_path, cfg.dataset_test_path, cfg.hidden_sizes,
        cfg.teacher_epochs, cfg.teacher_batch, cfg.teacher_lr, cfg.momentum, seed,
    )


def build_teacher(cfg: ExperimentConfig, d_full: data.Dataset, seed: int) -> Network:
    """Train the toy teacher MLP on the full dataset."""
    sizes = (cfg.dim,) + hidden_sizes(cfg)
    specs = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        specs += [nn.dense(a, b), nn.relu()]
    specs.append(nn.softmax_head(sizes[-1], cfg.K))
    teacher = Network(specs, (cfg.dim,), seed=stage_seed(seed, "teacher-init"), role="teacher")
    nn.train_classifier(
        teacher, d_full.features, d_full.labels,
        epochs=cfg.teacher_epochs, batch_size=cfg.teacher_batch,
        learning_rate=cfg.teacher_lr, momentum=cfg.momentum,
        seed=stage_seed(seed, "teacher-train"),
    )
    return teacher


def _build_world(cfg: ExperimentConfig, seed: int):
    if cfg.dataset_train_path:
        if not cfg.dataset_test_path:
            raise ConfigError("dataset_train_path requires dataset_test_path")
        d_full = data.load_dataset(cfg.dataset_train_path, provenance="full")
        test_pool = data.load_dataset(cfg.dataset_test_path, provenance="test")
        if d_full.num_classes != cfg.K:
            raise ConfigError(
                f"dataset has {d_full.num_classes} classes but config says K={cfg.K}"
            )
    else:
        d_full, test_pool = data.synth_dataset(
            cfg.K, cfg.dim, cfg.per_class, cfg.separation,
            seed=stage_seed(seed, "data"), test_per_class=cfg.test_per_class,
        )
    validation, test = data.split_validation(test_pool, cfg.val_fraction, stage_seed(seed, "valsplit"))
    teacher = build_teacher(cfg, d_full, seed)
    return d_full, validation, test, teacher


def _world(cfg: ExperimentConfig, seed: int):
    return _cached(_data_key(cfg, seed), lambda: _build_world(cfg, seed))


def _build_pool(cfg: ExperimentConfig, d_full: data.Dataset, seed: int) -> data.OODPool:
    if cfg.ood_path:
        source = data.load_dataset(cfg.ood_path, provenance="ood-pool")
    else:
        source = data.synth_ood_source(
            cfg.dim, cfg.ood_pool_size + max(64, cfg.ood_pool_size // 4),
            cfg.ood_separation, cfg.ood_shift,
            seed=stage_seed(seed, "ood-source"), n_clusters=cfg.ood_clusters,
        )
    return data.build_ood_pool(source, d_full, cfg.ood_pool_size, stage_seed(seed, "ood-pool"))


@dataclass
class RunResult:
    """Everything measured for one (variant, run) cell."""

    variant: str
    run_index: int
    seed: int
    num: int
    top1: float
    recalls: list
    head_recall: float
    tail_recall: float
    tail_class_recall: float | None
    params_before: int
    params_after: int
    teacher_top1: float
    m_aux: int
    class_prior: list
    complementary_rates: list
    regularization_weights: list
    pruning_plan: dict
    wall_clock_s: float


def run_cell(cfg: ExperimentConfig, variant: str, run_index: int) -> RunResult:
    """Execute the full pipeline for one (variant, run) cell."""
    started = time.perf_counter()
    plan = resolve_stage_plan(cfg, variant)
    seed = run_seed(cfg.seed, run_index)
    d_full, validation, test, teacher = _world(cfg, seed)

    tail_plan = data.long_tail_counts(cfg.K, cfg.rho, cfg.n_max)
    counts = data.balanced_counts(cfg.K, tail_plan.total) if plan.balanced else np.asarray(tail_plan.counts)
    d_few = data.subsample(d_full, counts, stage_seed(seed, "sample"))

    prior = rebalance.class_prior(d_few.class_counts)
    comp_dist = rebalance.complementary_distribution(prior)
    reg_weights = rebalance.regularization_weights(comp_dist)
    m_aux = resolve_m_aux(cfg, d_few.n, prior)

    # m_aux = 0 means no auxiliary data anywhere: the aux-dependent paths
    # collapse to their OOD-free boundaries
    if m_aux == 0:
        plan = replace(plan, few_weight=1.0, importance_source="few",
                       use_aux_finetune=False, reg_weight=0.0)

    need_aux = plan.few_weight < 1 or plan.use_aux_finetune or plan.importance_source == "mixture"
    d_aux = None
    if need_aux:
        pool = _cached(
            _data_key(cfg, seed) + ("pool", cfg.ood_path, cfg.ood_pool_size,
                                    cfg.ood_shift, cfg.ood_separation, cfg.ood_clusters),
            lambda: _build_pool(cfg, d_full, seed),
        )
        d_aux = rebalance.assign_ood_labels(pool, comp_dist, m_aux, stage_seed(seed, "aux-labels"))

    comp_key = _data_key(cfg, seed) + (
        "compress", plan.balanced, plan.weight_mode, plan.importance_source, plan.few_weight,
        m_aux if need_aux else 0, cfg.rho, cfg.n_max, cfg.prune_ratio, cfg.temperature,
        cfg.distill_epochs, cfg.distill_batch, cfg.distill_lr,
        cfg.ood_path, cfg.ood_pool_size, cfg.ood_shift, cfg.ood_separation, cfg.ood_clusters,
    )

    def build_student():
        imp_data = d_few
        if plan.importance_source == "mixture" and d_aux is not None and d_aux.n > 0:
            imp_data = data.Dataset(
                np.concatenate([d_few.features, d_aux.features]),
                np.concatenate([d_few.labels, d_aux.labels]),
                cfg.K, provenance="few",
            )
        importance = compress.per_class_importance(teacher, imp_data)
        weights = compress.frequency_weights(d_few.class_counts, plan.weight_mode)
        scores = compress.aggregate_scores(importance, weights)
        prune_plan = compress.select_prune(scores, cfg.prune_ratio)
        student = compress.apply_prune(teacher, prune_plan)
        dcfg = compress.DistillationConfig(
            few_weight=plan.few_weight, temperature=cfg.temperature,
            epochs=cfg.distill_epochs, batch_size=cfg.distill_batch,
            learning_rate=cfg.distill_lr, momentum=cfg.momentum,
            seed=stage_seed(seed, "distill"),
        )
        distilled, _ = compress.joint_distill(
            teacher, student, d_few, d_aux if plan.few_weight < 1 else None, dcfg
        )
        return distilled, prune_plan

    distilled, prune_plan = _cached(comp_key, build_student)

    fcfg = finetune.FinetuneConfig(
        reg_weight=plan.reg_weight, epochs=cfg.finetune_epochs, patience=cfg.patience,
        batch_size=cfg.finetune_batch, learning_rate=cfg.finetune_lr,
        momentum=cfg.momentum, seed=stage_seed(seed, "finetune"),
    )
    final, _ = finetune.finetune(
        distilled, d_few, d_aux if plan.use_aux_finetune else None,
        reg_weights, fcfg, validation,
    )

    result = evaluate(final, test)
    half = cfg.K // 2
    return RunResult(
        variant=variant,
        run_index=run_index,
        seed=seed,
        num=cfg.n_max,
        top1=result.top1,
        recalls=result.recalls,
        head_recall=result.mean_recall(range(half)),
        tail_recall=result.mean_recall(range(half, cfg.K)),
        tail_class_recall=result.recalls[cfg.K - 1],
        params_before=teacher.param_count(),
        params_after=final.param_count(),
        teacher_top1=evaluate(teacher, test).top1,
        m_aux=m_aux if need_aux else 0,
        class_prior=[float(v) for v in prior.weights],
        complementary_rates=[float(v) for v in comp_dist.rates],
        regularization_weights=[float(v) for v in reg_weights],
        pruning_plan=prune_plan.to_json(),
        wall_clock_s=time.perf_counter() - started,
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class ExperimentReport:
    """All run cells of one experiment plus per-variant aggregates."""

    config: dict
    rows: list  # RunResult, sorted by (variant, run_index)
    aggregates: dict = field(default_factory=dict)

    def variant_rows(self, variant: str) -> list:
        return [r for r in self.rows if r.variant == variant]

    def mean_top1(self, variant: str) -> float:
        return float(np.mean([r.top1 for r in self.variant_rows(variant)]))


def _aggregate(rows) -> dict:
    out = {}
    for variant in sorted({r.variant for r in rows}):
        group = [r for r in rows if r.variant == variant]
        top1 = np.array([r.top1 for r in group])
        tail = np.array([r.tail_recall for r in group])
        head = np.array([r.head_recall for r in group])
        tail_class = [r.tail_class_recall for r in group if r.tail_class_recall is not None]
        out[variant] = {
            "runs": len(group),
            "top1_mean": float(top1.mean()),
            "top1_std": float(top1.std(ddof=1)) if len(group) > 1 else 0.0,
            "head_recall_mean": float(head.mean()),
            "tail_recall_mean": float(tail.mean()),
            "tail_class_recall_mean": float(np.mean(tail_class)) if tail_class else None,
        }
    return out


def _finish(cfg: ExperimentConfig, rows) -> ExperimentReport:
    rows = sorted(rows, key=lambda r: (r.variant, r.run_index))
    return ExperimentReport(config_echo(cfg), rows, _aggregate(rows))


def _cell_job(args):
    cfg_values, variant, run_index = args
    cfg = ExperimentConfig(**cfg_values)
    return run_cell(cfg, variant, run_index)


def _run_cells(cfg: ExperimentConfig, cells) -> list:
    if cfg.jobs == 1:
        return [run_cell(cfg, v, i) for v, i in cells]
    cfg_values = {f.name: getattr(cfg, f.name) for f in fields(ExperimentConfig)}
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(_cell_job, [(cfg_values, v, i) for v, i in cells]))


def run_variant(cfg: ExperimentConfig) -> ExperimentReport:
    """Run cfg.variant for every run index and aggregate."""
    validate_config(cfg)
    cells = [(cfg.variant, i) for i in range(cfg.runs)]
    return _finish(cfg, _run_cells(cfg, cells))


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run every variant in cfg.variants with shared per-run seeds."""
    validate_config(cfg)
    cells = [(variant, i) for variant in cfg.variants for i in range(cfg.runs)]
    return _finish(cfg, _run_cells(cfg, cells))


def sweep(cfg: ExperimentConfig, param: str, values) -> ExperimentReport:
    """One run_variant per value of lambda, eta, or m_aux, with shared seeds.

    Rows keep the fixed CSV schema by tagging the variant name with the swept
    value, e.g. ``full@lambda=0.5``.
    """
    validate_config(cfg)
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}")
    rows = []
    for value in values:
        if param == "lambda":
            sub = replace(cfg, lambda_=float(value))
        elif param == "eta":
            sub = replace(cfg, eta=float(value))
        else:
            sub = replace(cfg, m_aux=str(value))
        validate_config(sub)
        tag = f"{cfg.variant}@{param}={value}"
        for i in range(cfg.runs):
            row = run_cell(sub, cfg.variant, i)
            row.variant = tag
            rows.append(row)
    return _finish(cfg, rows)


def write_report_csv(report: ExperimentReport, path) -> None:
    """report.csv: variant, seed, num, top1, per-class recalls, param counts,
    wall clock (the timing column is excluded from determinism contracts)."""
    k = len(report.rows[0].recalls) if report.rows else 0
    header = (
        ["variant", "seed", "num", "top1"]
        + [f"recall_{j}" for j in range(k)]
        + ["params_before", "params_after", "wall_clock_s"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in report.rows:
            recalls = ["" if v is None else repr(v) for v in r.recalls]
            writer.writerow(
                [r.variant, r.seed, r.num, repr(r.top1)]
                + recalls
                + [r.params_before, r.params_after, f"{r.wall_clock_s:.3f}"]
            )


def write_report_json(report: ExperimentReport, path) -> None:
    payload = {
        "config": report.config,
        "aggregates": report.aggregates,
        "runs": [asdict(r) for r in report.rows],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_aggregates(report: ExperimentReport) -> str:
    """Human-readable aggregate table, one line per variant."""
    lines = []
    for variant, agg in report.aggregates.items():
        lines.append(
            f"{variant:<28} runs={agg['runs']}  top1={agg['top1_mean']:.4f}"
            f"±{agg['top1_std']:.4f}  head={agg['head_recall_mean']:.4f}"
            f"  tail={agg['tail_recall_mean']:.4f}"
        )
    return "\n".join(lines)
