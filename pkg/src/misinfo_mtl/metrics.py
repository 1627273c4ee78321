"""Classification metrics: accuracy, macro-F1, per-class breakdowns, seed stats.

All functions are pure. Per-class scores use the zero-division -> 0 convention,
and macro-F1 averages over *all* declared classes, including classes absent
from the reference labels.
"""

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    support: float


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy, macro-F1 and per-class scores; optionally mean +- std over runs."""

    accuracy: float
    macro_f1: float
    per_class: tuple[ClassMetrics, ...]
    num_examples: int
    n_runs: int = 1
    accuracy_std: float = 0.0
    macro_f1_std: float = 0.0
    std_defined: bool = False

    def to_dict(self) -> dict:
        d = {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "num_examples": self.num_examples,
            "n_runs": self.n_runs,
            "accuracy_std": self.accuracy_std,
            "macro_f1_std": self.macro_f1_std,
            "std_defined": self.std_defined,
            "per_class": [vars(c) for c in self.per_class],
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        per_class = tuple(ClassMetrics(**c) for c in d["per_class"])
        return cls(
            accuracy=d["accuracy"], macro_f1=d["macro_f1"], per_class=per_class,
            num_examples=d["num_examples"], n_runs=d.get("n_runs", 1),
            accuracy_std=d.get("accuracy_std", 0.0), macro_f1_std=d.get("macro_f1_std", 0.0),
            std_defined=d.get("std_defined", False),
        )


def _check_inputs(preds, labels):
    if len(preds) != len(labels):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(labels)} labels")
    if len(preds) == 0:
        raise ValueError("empty prediction list")


def accuracy(preds, labels) -> float:
    """Fraction of positions where prediction equals label."""
    _check_inputs(preds, labels)
    matches = sum(1 for p, y in zip(preds, labels) if p == y)
    return matches / len(labels)


def per_class_counts(preds, labels, num_classes: int):
    """(tp, fp, fn, support) per class index."""
    _check_inputs(preds, labels)
    tp = [0] * num_classes
    fp = [0] * num_classes
    fn = [0] * num_classes
    support = [0] * num_classes
    for p, y in zip(preds, labels):
        p, y = int(p), int(y)
        if not (0 <= p < num_classes and 0 <= y < num_classes):
            raise ValueError(f"class index out of range [0, {num_classes})")
        support[y] += 1
        if p == y:
            tp[y] += 1
        else:
            fp[p] += 1
            fn[y] += 1
    return tp, fp, fn, support


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def macro_f1(preds, labels, num_classes: int) -> float:
    """Unweighted mean of per-class F1 over all ``num_classes`` classes."""
    tp, fp, fn, _ = per_class_counts(preds, labels, num_classes)
    total = 0.0
    for c in range(num_classes):
        total += _prf(tp[c], fp[c], fn[c])[2]
    return total / num_classes


def compute_report(preds, labels, class_names) -> MetricsReport:
    """Full metrics report for integer predictions against integer labels."""
    num_classes = len(class_names)
    tp, fp, fn, support = per_class_counts(preds, labels, num_classes)
    per_class = []
    f1_total = 0.0
    for c, name in enumerate(class_names):
        p, r, f1 = _prf(tp[c], fp[c], fn[c])
        f1_total += f1
        per_class.append(ClassMetrics(label=name, precision=p, recall=r, f1=f1, support=support[c]))
    return MetricsReport(
        accuracy=accuracy(preds, labels),
        macro_f1=f1_total / num_classes,
        per_class=tuple(per_class),
        num_examples=len(labels),
    )


def _mean_std(values) -> tuple[float, float, bool]:
    n = len(values)
    if all(v == values[0] for v in values):
        return values[0], 0.0, n >= 2  # exact when every run agrees
    mean = sum(values) / n
    if n < 2:
        return mean, 0.0, False  # sample stddev undefined for one run
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var), True


def average_reports(reports: list[MetricsReport]) -> MetricsReport:
    """Arithmetic mean (and sample stddev) of metrics across runs.

    Per-class entries are averaged positionally; all reports must describe the
    same label set.
    """
    if not reports:
        raise ValueError("no reports to average")
    labels = [tuple(c.label for c in r.per_class) for r in reports]
    if len(set(labels)) != 1:
        raise ValueError("reports describe different label sets")
    acc_mean, acc_std, defined = _mean_std([r.accuracy for r in reports])
    f1_mean, f1_std, _ = _mean_std([r.macro_f1 for r in reports])
    per_class = []
    for i, name in enumerate(labels[0]):
        per_class.append(
            ClassMetrics(
                label=name,
                precision=sum(r.per_class[i].precision for r in reports) / len(reports),
                recall=sum(r.per_class[i].recall for r in reports) / len(reports),
                f1=sum(r.per_class[i].f1 for r in reports) / len(reports),
                support=sum(r.per_class[i].support for r in reports) / len(reports),
            )
        )
    return MetricsReport(
        accuracy=acc_mean,
        macro_f1=f1_mean,
        per_class=tuple(per_class),
        num_examples=round(sum(r.num_examples for r in reports) / len(reports)),
        n_runs=len(reports),
        accuracy_std=acc_std,
        macro_f1_std=f1_std,
        std_defined=defined,
    )


def seed_average(runs: dict[int, MetricsReport]) -> MetricsReport:
    """Mean and sample stddev of a metric report across seeds."""
    if not runs:
        raise ValueError("no seed runs to average")
    return average_reports([runs[seed] for seed in sorted(runs)])


def format_report_table(rows: list[tuple[str, MetricsReport]], title: str = "") -> str:
    """Aligned text table with one row per (name, report): Acc and F1 columns."""
    name_width = max([len(name) for name, _ in rows] + [len("row")])
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'row'.ljust(name_width)}  {'Acc':>8}  {'F1':>8}")
    for name, rep in rows:
        acc = f"{rep.accuracy * 100:.2f}%"
        f1 = f"{rep.macro_f1 * 100:.2f}%"
        lines.append(f"{name.ljust(name_width)}  {acc:>8}  {f1:>8}")
    return "\n".join(lines)
