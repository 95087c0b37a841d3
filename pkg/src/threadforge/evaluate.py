"""Leave-one-event-out evaluation, metrics, and early-detection curves.

Each event serves once as the whole test set; training uses the other
events' originals plus their augmented copies. Aggregate numbers pool the
per-fold predictions instead of averaging fold metrics, since fold sizes
differ wildly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import SCHEME_VALUES, Dataset, Thread
from .features import derive_seed
from .models import TrainConfig, predict, train
from .mos import AugmentationStrategy, CandidateTable, oversample_dataset

VARIANT_NONE = "none"
VARIANTS = (VARIANT_NONE, "random", "nonrandom")

DEFAULT_DELAYS = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0,
                  10.0, 12.0, 16.0, 20.0, 24.0, 36.0, 48.0, 72.0)

AGGREGATE = "aggregate"


@dataclass(frozen=True)
class Fold:
    test_event: str
    train_threads: tuple[Thread, ...]
    test_threads: tuple[Thread, ...]


def loocv_folds(dataset: Dataset, augmented: Dataset | None = None) -> list[Fold]:
    """One fold per event; train on the other events' originals + augmentations.

    Test threads are the held-out event's originals only. `augmented`
    defaults to the dataset itself (variant "none").
    """
    if augmented is None:
        augmented = dataset
    events = list(dataset.events)
    if len(events) < 2:
        raise ValueError(f"need at least 2 events for leave-one-out, got {len(events)}")
    folds = []
    for event in events:
        train_threads = tuple(
            t for other, threads in augmented.events.items() if other != event for t in threads
        )
        test_threads = tuple(t for t in dataset.events[event] if t.provenance.is_original)
        folds.append(Fold(event, train_threads, test_threads))
    return folds


def audit_folds(folds: list[Fold]) -> list[str]:
    """Leakage scan: no test thread, or augmentation of one, may train."""
    violations = []
    for fold in folds:
        test_ids = {t.thread_id for t in fold.test_threads}
        for t in fold.train_threads:
            if t.event == fold.test_event:
                violations.append(f"fold {fold.test_event}: train thread {t.thread_id} from test event")
            if t.thread_id in test_ids:
                violations.append(f"fold {fold.test_event}: test thread {t.thread_id} in training")
            if t.provenance.parent_thread_id in test_ids:
                violations.append(
                    f"fold {fold.test_event}: train thread {t.thread_id} derived from test thread")
    return violations


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    micro_f1: float
    macro_f1: float
    per_class: dict[str, ClassScores]
    confusion: np.ndarray  # confusion[i, j] = count(truth=i, pred=j)
    labels: tuple[str, ...]


def _to_indices(values, labels: tuple[str, ...]) -> np.ndarray:
    out = []
    for v in values:
        if isinstance(v, str):
            if v not in labels:
                raise ValueError(f"label {v!r} not in {labels}")
            out.append(labels.index(v))
        else:
            i = int(v)
            if not 0 <= i < len(labels):
                raise ValueError(f"label index {i} out of range for {labels}")
            out.append(i)
    return np.array(out, dtype=np.int64)


def compute_metrics(preds, truth, labels: tuple[str, ...]) -> Metrics:
    """Accuracy, micro/macro F1, per-class scores, confusion matrix.

    Micro-F1 is computed from pooled TP/FP/FN counts (for single-label
    classification it must equal accuracy; that identity is a test, not an
    implementation shortcut). Absent classes score F1 = 0 in the macro mean.
    """
    p = _to_indices(preds, labels)
    t = _to_indices(truth, labels)
    if p.shape != t.shape:
        raise ValueError(f"{p.shape[0]} predictions vs {t.shape[0]} truths")
    if p.size == 0:
        raise ValueError("empty prediction set")
    c = len(labels)
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (t, p), 1)
    per_class: dict[str, ClassScores] = {}
    tp_sum = fp_sum = fn_sum = 0
    f1s = []
    for i, name in enumerate(labels):
        tp = int(confusion[i, i])
        fp = int(confusion[:, i].sum()) - tp
        fn = int(confusion[i, :].sum()) - tp
        tp_sum, fp_sum, fn_sum = tp_sum + tp, fp_sum + fp, fn_sum + fn
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[name] = ClassScores(precision, recall, f1, tp + fn)
        f1s.append(f1)
    denom = 2 * tp_sum + fp_sum + fn_sum
    micro_f1 = 2 * tp_sum / denom if denom else 0.0
    return Metrics(
        accuracy=float(np.trace(confusion)) / p.size,
        micro_f1=micro_f1,
        macro_f1=float(np.mean(f1s)),
        per_class=per_class,
        confusion=confusion,
        labels=labels,
    )


# ---------------------------------------------------------------------------
# Early-detection cohorts


def early_cohort(thread: Thread, delay_hours: float) -> Thread:
    """Sub-thread visible delay_hours after the source (inclusive cutoff).

    Keeps the source and every reply whose elapsed time is <= the delay;
    parents precede children in time, so the result is still a tree.
    """
    if delay_hours < 0:
        raise ValueError(f"delay_hours must be >= 0, got {delay_hours}")
    t0 = thread.source.created_at
    cutoff = delay_hours * 3600.0
    kept = [t for t in thread.tweets if t.parent_id is None or t.created_at - t0 <= cutoff]
    return Thread.build(thread.thread_id, thread.event, thread.label, kept, thread.provenance)


def validate_schedule(delays) -> tuple[float, ...]:
    out = tuple(float(d) for d in delays)
    if not out:
        raise ValueError("empty checkpoint schedule")
    if any(d < 0 for d in out):
        raise ValueError("delays must be non-negative")
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ValueError("delays must be strictly increasing")
    return out


# ---------------------------------------------------------------------------
# Experiment runners


@dataclass(frozen=True)
class FoldResult:
    event: str
    metrics: Metrics
    preds: tuple[int, ...]
    truth: tuple[int, ...]


@dataclass(frozen=True)
class LoocvResult:
    variant: str
    model_kind: str
    folds: tuple[FoldResult, ...]
    aggregate: Metrics


@dataclass(frozen=True)
class CurvePoint:
    variant: str
    model_kind: str
    fold: str  # event name or "aggregate"
    delay_hours: float
    accuracy: float
    micro_f1: float
    macro_f1: float


def build_variant_dataset(dataset: Dataset, variant: str, config: TrainConfig,
                          candidates: CandidateTable | None = None,
                          p_aug: float = 0.20, fold_cap: int = 3,
                          alias_table=None) -> Dataset:
    if variant == VARIANT_NONE:
        return dataset
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    strategy = AugmentationStrategy(kind=variant, p_aug=p_aug, fold_cap=fold_cap, seed=config.seed)
    return oversample_dataset(dataset, strategy, candidates, config.seed, alias_table)


def _fold_config(config: TrainConfig, event: str) -> TrainConfig:
    return replace(config, seed=derive_seed(config.seed, event))


def run_loocv(model_kind: str, dataset: Dataset, variant: str, config: TrainConfig,
              provider, candidates: CandidateTable | None = None,
              p_aug: float = 0.20, fold_cap: int = 3, alias_table=None,
              n_threads: int = 1) -> LoocvResult:
    """Train and test one model per fold; pool predictions for the aggregate."""
    labels = SCHEME_VALUES[dataset.scheme]
    augmented = build_variant_dataset(dataset, variant, config, candidates, p_aug, fold_cap, alias_table)
    folds = loocv_folds(dataset, augmented)
    violations = audit_folds(folds)
    if violations:
        raise RuntimeError("fold leakage: " + "; ".join(violations[:5]))
    results = []
    for fold in folds:
        fold_cfg = _fold_config(config, fold.test_event)
        params, _ = train(model_kind, list(fold.train_threads), provider, fold_cfg, alias_table)
        preds = predict(model_kind, list(fold.test_threads), provider, params, fold_cfg,
                        alias_table, n_threads=n_threads)
        truth = [t.label.index for t in fold.test_threads]
        results.append(FoldResult(
            fold.test_event,
            compute_metrics(preds, truth, labels),
            tuple(int(x) for x in preds),
            tuple(truth),
        ))
    all_preds = [p for r in results for p in r.preds]
    all_truth = [t for r in results for t in r.truth]
    aggregate = compute_metrics(all_preds, all_truth, labels)
    return LoocvResult(variant, model_kind, tuple(results), aggregate)


def run_early_eval(model_kind: str, dataset: Dataset, variant: str, schedule,
                   config: TrainConfig, provider, candidates: CandidateTable | None = None,
                   p_aug: float = 0.20, fold_cap: int = 3, alias_table=None,
                   n_threads: int = 1) -> list[CurvePoint]:
    """One model per fold, evaluated on test cohorts at each delay checkpoint.

    Returns per-fold curve points plus an aggregate curve pooling all folds
    at each delay.
    """
    delays = validate_schedule(schedule)
    labels = SCHEME_VALUES[dataset.scheme]
    augmented = build_variant_dataset(dataset, variant, config, candidates, p_aug, fold_cap, alias_table)
    folds = loocv_folds(dataset, augmented)
    violations = audit_folds(folds)
    if violations:
        raise RuntimeError("fold leakage: " + "; ".join(violations[:5]))
    points: list[CurvePoint] = []
    pooled: dict[float, tuple[list[int], list[int]]] = {d: ([], []) for d in delays}
    for fold in folds:
        fold_cfg = _fold_config(config, fold.test_event)
        params, _ = train(model_kind, list(fold.train_threads), provider, fold_cfg, alias_table)
        truth = [t.label.index for t in fold.test_threads]
        for delay in delays:
            cohorts = [early_cohort(t, delay) for t in fold.test_threads]
            preds = predict(model_kind, cohorts, provider, params, fold_cfg,
                            alias_table, n_threads=n_threads)
            m = compute_metrics(preds, truth, labels)
            points.append(CurvePoint(variant, model_kind, fold.test_event, delay,
                                     m.accuracy, m.micro_f1, m.macro_f1))
            pooled[delay][0].extend(int(x) for x in preds)
            pooled[delay][1].extend(truth)
    for delay in delays:
        preds, truth = pooled[delay]
        m = compute_metrics(preds, truth, labels)
        points.append(CurvePoint(variant, model_kind, AGGREGATE, delay,
                                 m.accuracy, m.micro_f1, m.macro_f1))
    return points


# ---------------------------------------------------------------------------
# Report files


def render_results_table(result: LoocvResult) -> str:
    lines = ["variant\tmodel\tfold\taccuracy\tmicro_f1\tmacro_f1"]
    for fold in result.folds:
        m = fold.metrics
        lines.append(f"{result.variant}\t{result.model_kind}\t{fold.event}"
                     f"\t{m.accuracy:.6f}\t{m.micro_f1:.6f}\t{m.macro_f1:.6f}")
    a = result.aggregate
    lines.append(f"{result.variant}\t{result.model_kind}\t{AGGREGATE}"
                 f"\t{a.accuracy:.6f}\t{a.micro_f1:.6f}\t{a.macro_f1:.6f}")
    return "\n".join(lines) + "\n"


def render_curve_table(points: list[CurvePoint]) -> str:
    lines = ["variant\tmodel\tfold\tdelay_hours\taccuracy\tmicro_f1\tmacro_f1"]
    for p in points:
        lines.append(f"{p.variant}\t{p.model_kind}\t{p.fold}\t{p.delay_hours:g}"
                     f"\t{p.accuracy:.6f}\t{p.micro_f1:.6f}\t{p.macro_f1:.6f}")
    return "\n".join(lines) + "\n"


def parse_curve_table(text: str) -> list[CurvePoint]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split("\t")[:4] != ["variant", "model", "fold", "delay_hours"]:
        raise ValueError("not a curve table")
    points = []
    for ln in lines[1:]:
        variant, model, fold, delay, acc, micro, macro = ln.split("\t")
        points.append(CurvePoint(variant, model, fold, float(delay),
                                 float(acc), float(micro), float(macro)))
    return points


def render_curve_plot(points: list[CurvePoint], path) -> None:
    """Accuracy-vs-delay image, one line per (variant, model), aggregate folds."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    series: dict[tuple[str, str], list[CurvePoint]] = {}
    for p in points:
        if p.fold == AGGREGATE:
            series.setdefault((p.variant, p.model_kind), []).append(p)
    for (variant, model), pts in sorted(series.items()):
        pts = sorted(pts, key=lambda p: p.delay_hours)
        ax.plot([p.delay_hours for p in pts], [p.accuracy for p in pts],
                marker="o", markersize=3, label=f"{model} / {variant}")
    ax.set_xlabel("delay (hours)")
    ax.set_ylabel("accuracy")
    ax.set_title("Early rumour detection")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
