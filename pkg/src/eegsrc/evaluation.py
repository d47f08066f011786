"""Experimental protocol: nine scenarios, stratified k-fold cross-validation,
accuracy/sensitivity/specificity, and SNR robustness sweeps.

Training happens inside each fold (no leakage); noise is applied to test
epochs only, with models trained on clean data.  Headline numbers use the
pooled (summed) fold confusion; per-fold means are reported alongside.
The positive class for sensitivity is the one containing subset E whenever
E participates, class 0 otherwise.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import classify_batch, train_model
from .dataset import (
    DatasetError,
    EpochMatrix,
    LabeledDataset,
    add_awgn,
    assemble_scenario,
    stratified_kfold,
    CASE_IDS,
)
from .dict_learning import LearnConfig


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DatasetError("confusion matrix must be square")
        if np.any(counts < 0):
            raise DatasetError("confusion counts must be nonnegative")
        self.counts = counts

    @classmethod
    def from_labels(cls, true_labels, predicted, n_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        for t, p in zip(np.asarray(true_labels), np.asarray(predicted)):
            counts[int(t), int(p)] += 1
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


@dataclass(frozen=True)
class MetricSet:
    """Accuracy/sensitivity/specificity as fractions in [0, 1].

    Undefined ratios (zero denominators) are NaN and listed in `undefined`;
    macro averages exclude them.
    """

    accuracy: float
    sensitivity: float
    specificity: float
    undefined: tuple[str, ...] = ()


def metrics(cm: ConfusionMatrix, positive_class: int = 0) -> MetricSet:
    """Accuracy = trace/total; binary sensitivity/specificity against the
    positive class; macro one-vs-rest averages for more than two classes."""
    total = cm.total
    if total == 0:
        raise DatasetError("metrics undefined for an empty confusion matrix")
    counts = cm.counts
    accuracy = float(np.trace(counts)) / total
    undefined: list[str] = []

    def ovr(cls: int):
        tp = float(counts[cls, cls])
        fn = float(counts[cls].sum()) - tp
        fp = float(counts[:, cls].sum()) - tp
        tn = total - tp - fn - fp
        sens = tp / (tp + fn) if tp + fn > 0 else np.nan
        spec = tn / (tn + fp) if tn + fp > 0 else np.nan
        return sens, spec

    if cm.n_classes == 2:
        sens, spec = ovr(positive_class)
        if np.isnan(sens):
            undefined.append(f"sensitivity[{positive_class}]")
        if np.isnan(spec):
            undefined.append(f"specificity[{positive_class}]")
    else:
        per_class = [ovr(c) for c in range(cm.n_classes)]
        sens_vals = [s for s, _ in per_class if not np.isnan(s)]
        spec_vals = [p for _, p in per_class if not np.isnan(p)]
        undefined += [
            f"sensitivity[{c}]" for c, (s, _) in enumerate(per_class) if np.isnan(s)
        ]
        undefined += [
            f"specificity[{c}]" for c, (_, p) in enumerate(per_class) if np.isnan(p)
        ]
        sens = float(np.mean(sens_vals)) if sens_vals else np.nan
        spec = float(np.mean(spec_vals)) if spec_vals else np.nan
    return MetricSet(
        accuracy=accuracy,
        sensitivity=float(sens),
        specificity=float(spec),
        undefined=tuple(undefined),
    )


@dataclass
class FoldResult:
    confusion: ConfusionMatrix
    metrics: MetricSet
    train_seconds: float
    test_seconds: float


@dataclass
class CaseReport:
    case_id: str
    class_names: tuple[str, ...]
    positive_class: int
    k_folds: int
    seed: int
    per_fold: list[FoldResult]
    pooled_confusion: ConfusionMatrix
    aggregate: MetricSet
    fold_mean: MetricSet
    config_snapshot: dict
    total_seconds: float


@dataclass
class NoiseSweepReport:
    case_id: str
    points: list[tuple[float, float]]
    seed: int
    config_snapshot: dict

    def __post_init__(self):
        grid = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise DatasetError("snr grid must be strictly increasing")


def positive_class_of(class_names) -> int:
    """Index of the class containing subset E, else 0."""
    for i, name in enumerate(class_names):
        if "E" in name:
            return i
    return 0


def src_trainer(algorithm: str = "cbwrlsu", mod_iters: int = 20):
    """Default fold trainer: fit an SRC model, predict by residual argmin.

    The returned predictor takes (epochs, true_labels); true labels are
    ignored here and exist so harness-verification stubs can echo them.
    """

    def fit(train_ds: LabeledDataset, learn: LearnConfig):
        model = train_model(train_ds, learn, algorithm=algorithm, mod_iters=mod_iters)

        def predict(epochs: EpochMatrix, true_labels=None) -> np.ndarray:
            results = classify_batch(model, epochs)
            return np.asarray([r.label for r in results], dtype=np.int64)

        return predict

    return fit


def _snapshot(case_id, learn, k_folds, seed, extra=None) -> dict:
    snap = {
        "case_id": case_id,
        "k_folds": k_folds,
        "seed": seed,
        "learn": dataclasses.asdict(learn),
    }
    if extra:
        snap.update(extra)
    return snap


def run_case(
    case_id: str,
    data,
    learn: LearnConfig,
    k_folds: int = 10,
    seed: int = 0,
    algorithm: str = "cbwrlsu",
    trainer=None,
    dataset: LabeledDataset | None = None,
) -> CaseReport:
    """Cross-validated evaluation of one scenario.

    `data` maps subset ids to EpochMatrix; alternatively pass a prebuilt
    `dataset` (synthetic runs).  `trainer` overrides model fitting, e.g.
    with a label-echo stub when verifying the harness itself.
    """
    t_start = time.perf_counter()
    ds = dataset if dataset is not None else assemble_scenario(case_id, data)
    splits = stratified_kfold(ds, k_folds, seed)
    fit = trainer if trainer is not None else src_trainer(algorithm)
    positive = positive_class_of(ds.class_names)
    per_fold: list[FoldResult] = []
    pooled = ConfusionMatrix(np.zeros((ds.n_classes, ds.n_classes), dtype=np.int64))
    for split in splits:
        train_ds = ds.subset(split.train_indices)
        test_ds = ds.subset(split.test_indices)
        t0 = time.perf_counter()
        predict = fit(train_ds, learn)
        t1 = time.perf_counter()
        predicted = predict(test_ds.epochs, test_ds.labels)
        t2 = time.perf_counter()
        cm = ConfusionMatrix.from_labels(test_ds.labels, predicted, ds.n_classes)
        per_fold.append(
            FoldResult(
                confusion=cm,
                metrics=metrics(cm, positive),
                train_seconds=t1 - t0,
                test_seconds=t2 - t1,
            )
        )
        pooled = pooled + cm
    fold_mean = MetricSet(
        accuracy=float(np.mean([f.metrics.accuracy for f in per_fold])),
        sensitivity=float(np.nanmean([f.metrics.sensitivity for f in per_fold])),
        specificity=float(np.nanmean([f.metrics.specificity for f in per_fold])),
    )
    return CaseReport(
        case_id=ds.case_id,
        class_names=ds.class_names,
        positive_class=positive,
        k_folds=k_folds,
        seed=seed,
        per_fold=per_fold,
        pooled_confusion=pooled,
        aggregate=metrics(pooled, positive),
        fold_mean=fold_mean,
        config_snapshot=_snapshot(ds.case_id, learn, k_folds, seed, {"algorithm": algorithm}),
        total_seconds=time.perf_counter() - t_start,
    )


def run_all_cases(
    data,
    learn: LearnConfig,
    k_folds: int = 10,
    seed: int = 0,
    algorithm: str = "cbwrlsu",
    trainer=None,
) -> list[CaseReport]:
    """run_case for every scenario, in case order."""
    return [
        run_case(cid, data, learn, k_folds, seed, algorithm, trainer)
        for cid in CASE_IDS
    ]


def noise_sweep(
    case_id: str,
    data,
    learn: LearnConfig,
    snr_grid=None,
    seed: int = 0,
    k_folds: int = 10,
    algorithm: str = "cbwrlsu",
    trainer=None,
    dataset: LabeledDataset | None = None,
) -> NoiseSweepReport:
    """Accuracy versus SNR: train each fold once on clean data, classify
    noise-corrupted test epochs at every grid point."""
    if snr_grid is None:
        snr_grid = list(range(-20, 21, 2))
    snr_grid = [float(s) for s in snr_grid]
    if not snr_grid:
        raise DatasetError("snr grid must be nonempty")
    ds = dataset if dataset is not None else assemble_scenario(case_id, data)
    splits = stratified_kfold(ds, k_folds, seed)
    fit = trainer if trainer is not None else src_trainer(algorithm)
    pooled = [
        ConfusionMatrix(np.zeros((ds.n_classes, ds.n_classes), dtype=np.int64))
        for _ in snr_grid
    ]
    for fold_index, split in enumerate(splits):
        train_ds = ds.subset(split.train_indices)
        test_ds = ds.subset(split.test_indices)
        predict = fit(train_ds, learn)
        for si, snr in enumerate(snr_grid):
            noise_seed = int(
                np.random.SeedSequence((seed, fold_index, si)).generate_state(1)[0]
            )
            noisy = add_awgn(test_ds.epochs, snr, noise_seed)
            predicted = predict(noisy, test_ds.labels)
            pooled[si] = pooled[si] + ConfusionMatrix.from_labels(
                test_ds.labels, predicted, ds.n_classes
            )
    points = [
        (snr, metrics(pooled[si]).accuracy) for si, snr in enumerate(snr_grid)
    ]
    return NoiseSweepReport(
        case_id=ds.case_id,
        points=points,
        seed=seed,
        config_snapshot=_snapshot(
            ds.case_id, learn, k_folds, seed, {"algorithm": algorithm, "snr_grid": snr_grid}
        ),
    )


# ---------------------------------------------------------------------------
# report serialization


def _metricset_dict(m: MetricSet) -> dict:
    return {
        "accuracy": m.accuracy,
        "sensitivity": m.sensitivity,
        "specificity": m.specificity,
        "undefined": list(m.undefined),
    }


def case_report_to_dict(report: CaseReport) -> dict:
    return {
        "case_id": report.case_id,
        "class_names": list(report.class_names),
        "positive_class": report.positive_class,
        "k_folds": report.k_folds,
        "seed": report.seed,
        "aggregate": _metricset_dict(report.aggregate),
        "fold_mean": _metricset_dict(report.fold_mean),
        "pooled_confusion": report.pooled_confusion.counts.tolist(),
        "per_fold": [
            {
                "confusion": f.confusion.counts.tolist(),
                "metrics": _metricset_dict(f.metrics),
                "train_seconds": f.train_seconds,
                "test_seconds": f.test_seconds,
            }
            for f in report.per_fold
        ],
        "config_snapshot": report.config_snapshot,
        "total_seconds": report.total_seconds,
    }


def sweep_report_to_dict(report: NoiseSweepReport) -> dict:
    return {
        "case_id": report.case_id,
        "seed": report.seed,
        "points": [{"snr_db": s, "accuracy": a} for s, a in report.points],
        "config_snapshot": report.config_snapshot,
    }


def _fmt(value: float) -> str:
    return "nan" if np.isnan(value) else f"{100.0 * value:.4f}"


def case_report_csv_rows(report: CaseReport) -> list[list[str]]:
    """Flat rows (case, fold, snr, accuracy, sensitivity, specificity) with
    percentages; timing is deliberately excluded so reruns are byte-stable."""
    rows = []
    for i, f in enumerate(report.per_fold):
        rows.append(
            [
                report.case_id,
                str(i),
                "",
                _fmt(f.metrics.accuracy),
                _fmt(f.metrics.sensitivity),
                _fmt(f.metrics.specificity),
            ]
        )
    rows.append(
        [
            report.case_id,
            "pooled",
            "",
            _fmt(report.aggregate.accuracy),
            _fmt(report.aggregate.sensitivity),
            _fmt(report.aggregate.specificity),
        ]
    )
    return rows


def sweep_report_csv_rows(report: NoiseSweepReport) -> list[list[str]]:
    return [
        [report.case_id, "pooled", f"{snr:g}", _fmt(acc), "", ""]
        for snr, acc in report.points
    ]


CSV_HEADER = ["case", "fold", "snr_db", "accuracy", "sensitivity", "specificity"]


def write_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(rows)


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def summary_table(reports: list[CaseReport]) -> str:
    """Side-by-side summary in the usual case/accuracy/sensitivity/
    specificity layout (pooled, percentages)."""
    lines = [
        f"{'Case':<6} {'Accuracy (%)':>14} {'Sensitivity (%)':>17} {'Specificity (%)':>17}",
        "-" * 57,
    ]
    for r in reports:
        a = _fmt(r.aggregate.accuracy)
        s = _fmt(r.aggregate.sensitivity)
        p = _fmt(r.aggregate.specificity)
        lines.append(f"{r.case_id:<6} {a:>14} {s:>17} {p:>17}")
    return "\n".join(lines)
