"""Confusion matrices, per-class metrics, text/JSON/CSV reports and the modality ablation."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import EmptyEvaluation, IndexOutOfRange, LengthMismatch, ModalityError

ABLATION_ORDER = ("leap_only", "image_only", "fusion")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K), rows = true class, columns = predicted class
    labels: list | None = None

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def trace(self):
        return int(np.trace(self.counts))


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvaluationReport:
    confusion: ConfusionMatrix
    per_class: list
    accuracy: float
    macro_avg: tuple        # (precision, recall, f1)
    weighted_avg: tuple
    metadata: dict = field(default_factory=dict)

    @property
    def total(self):
        return self.confusion.total


def confusion_matrix(truth, pred, n_classes, labels=None) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    if truth.shape != pred.shape:
        raise LengthMismatch(f"{truth.size} true labels vs {pred.size} predictions")
    for name, arr in (("truth", truth), ("pred", pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise IndexOutOfRange(f"{name} contains an index outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return ConfusionMatrix(counts, list(labels) if labels is not None else None)


def _safe_div(num, den):
    return num / den if den else 0.0


def class_metrics(cm: ConfusionMatrix):
    """Precision, recall, F1 and support per class; empty denominators give 0."""
    c = cm.counts
    out = []
    for k in range(cm.n_classes):
        tp = int(c[k, k])
        predicted = int(c[:, k].sum())
        support = int(c[k, :].sum())
        p = _safe_div(tp, predicted)
        r = _safe_div(tp, support)
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        out.append(ClassMetrics(p, r, f1, support))
    return out


def aggregate(cm: ConfusionMatrix, per_class=None) -> EvaluationReport:
    total = cm.total
    if total == 0:
        raise EmptyEvaluation("no samples were evaluated")
    per_class = per_class if per_class is not None else class_metrics(cm)
    k = len(per_class)
    p = np.array([m.precision for m in per_class])
    r = np.array([m.recall for m in per_class])
    f = np.array([m.f1 for m in per_class])
    s = np.array([m.support for m in per_class], dtype=np.float64)
    macro = (float(p.sum() / k), float(r.sum() / k), float(f.sum() / k))
    weighted = tuple(float((v * s).sum() / s.sum()) for v in (p, r, f))
    col = cm.counts.sum(axis=0)
    row = cm.counts.sum(axis=1)
    meta = {"zero_division": {"precision": int((col == 0).sum()), "recall": int((row == 0).sum())}}
    return EvaluationReport(cm, per_class, cm.trace() / total, macro, weighted, meta)


def evaluate_predictions(truth, pred, labels) -> EvaluationReport:
    labels = list(labels)
    return aggregate(confusion_matrix(truth, pred, len(labels), labels))


# --- text report --------------------------------------------------------------

def round2(x) -> str:
    """Two decimals, halves rounded away from zero (on the shortest decimal repr)."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


REPORT_HEADER = ("Label", "Precision", "Recall", "F1-Score", "Support")


def format_report(report: EvaluationReport, labels=None) -> str:
    """Tab-separated classification report: one row per class, then the
    Accuracy, Macro Avg and Weighted Avg rows."""
    labels = list(labels if labels is not None else report.confusion.labels
                  or [str(i) for i in range(len(report.per_class))])
    lines = ["\t".join(REPORT_HEADER)]
    for name, m in zip(labels, report.per_class):
        lines.append("\t".join((name, round2(m.precision), round2(m.recall), round2(m.f1), str(m.support))))
    total = str(report.total)
    lines.append("\t".join(("Accuracy", "", "", round2(report.accuracy), total)))
    lines.append("\t".join(("Macro Avg", *map(round2, report.macro_avg), total)))
    lines.append("\t".join(("Weighted Avg", *map(round2, report.weighted_avg), total)))
    return "\n".join(lines) + "\n"


def parse_report(text):
    """Inverse of :func:`format_report` at the printed precision."""
    rows = [ln.split("\t") for ln in text.splitlines() if ln]
    if tuple(rows[0]) != REPORT_HEADER:
        raise ValueError("not a classification report")
    out = {"classes": {}}
    for cells in rows[1:]:
        name = cells[0]
        if name == "Accuracy":
            out["accuracy"] = (float(cells[3]), int(cells[4]))
        elif name in ("Macro Avg", "Weighted Avg"):
            out[name] = (float(cells[1]), float(cells[2]), float(cells[3]), int(cells[4]))
        else:
            out["classes"][name] = (float(cells[1]), float(cells[2]), float(cells[3]), int(cells[4]))
    return out


# --- machine-readable exports -------------------------------------------------

def report_to_dict(report: EvaluationReport, labels=None):
    labels = list(labels if labels is not None else report.confusion.labels
                  or [str(i) for i in range(len(report.per_class))])
    return {
        "labels": labels,
        "confusion": report.confusion.counts.tolist(),
        "per_class": [{"label": n, "precision": m.precision, "recall": m.recall, "f1": m.f1,
                       "support": m.support} for n, m in zip(labels, report.per_class)],
        "accuracy": report.accuracy,
        "total": report.total,
        "macro_avg": dict(zip(("precision", "recall", "f1"), report.macro_avg)),
        "weighted_avg": dict(zip(("precision", "recall", "f1"), report.weighted_avg)),
        "metadata": report.metadata,
    }


def report_from_dict(d) -> EvaluationReport:
    cm = ConfusionMatrix(np.asarray(d["confusion"], dtype=np.int64), list(d["labels"]))
    per_class = [ClassMetrics(m["precision"], m["recall"], m["f1"], m["support"]) for m in d["per_class"]]
    keys = ("precision", "recall", "f1")
    return EvaluationReport(cm, per_class, d["accuracy"], tuple(d["macro_avg"][k] for k in keys),
                            tuple(d["weighted_avg"][k] for k in keys), d.get("metadata", {}))


def write_report_json(path, report, labels=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report, labels), fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def read_report_json(path):
    with open(path, encoding="utf-8") as fh:
        return report_from_dict(json.load(fh))


def write_confusion_csv(path, cm: ConfusionMatrix, labels=None):
    labels = list(labels if labels is not None else cm.labels or range(cm.n_classes))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *labels])
        for name, row in zip(labels, cm.counts.tolist()):
            w.writerow([name, *row])


def read_confusion_csv(path) -> ConfusionMatrix:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    labels = rows[0][1:]
    counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    return ConfusionMatrix(counts, labels)


def write_metrics_csv(path, report: EvaluationReport):
    """(metric, value) rows for an overall-metrics bar chart."""
    rows = [("accuracy", report.accuracy)]
    for prefix, vals in (("macro", report.macro_avg), ("weighted", report.weighted_avg)):
        rows += [(f"{prefix}_{k}", v) for k, v in zip(("precision", "recall", "f1"), vals)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("metric,value\n")
        for k, v in rows:
            fh.write(f"{k},{v!r}\n")


# --- modality ablation ---------------------------------------------------------

@dataclass
class AblationResult:
    accuracy: dict
    split: dict
    runs: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)


def ablate(labels, samples, split, base_config, shape=None, log=None):
    """Train leap-only, image-only and fusion models on one shared split and
    report test accuracy for each."""
    from .dataset import split_manifest
    from .pipeline import train_on_corpus

    result = None
    for modality in ABLATION_ORDER:
        cfg = replace(base_config, modality=modality)
        try:
            run = train_on_corpus(labels, samples, split, cfg, shape=shape,
                                  log=(lambda r, m=modality: log(m, r)) if log else None)
        except Exception as exc:
            raise ModalityError(modality, exc) from exc
        truth, pred = run.test_predictions(modality)
        report = evaluate_predictions(truth, pred, labels)
        if result is None:
            result = AblationResult({}, split_manifest(run.train, run.val, run.test))
        result.accuracy[modality] = report.accuracy
        result.runs[modality] = run
        result.reports[modality] = report
    return result


def write_ablation_csv(path, accuracy: dict):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("modality,accuracy\n")
        for m in ABLATION_ORDER:
            fh.write(f"{m},{accuracy[m]!r}\n")


def read_ablation_csv(path):
    with open(path, encoding="utf-8") as fh:
        next(fh)
        return {m: float(v) for m, v in (ln.strip().split(",") for ln in fh if ln.strip())}
