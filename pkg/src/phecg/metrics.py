"""Accuracy, F1, ROC/AUC, overfitting diagnosis and report files."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyInput, UndefinedRoc


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def n(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class EvalReport:
    accuracy: float
    f1: float
    auc: float | None
    roc_points: list[tuple[float, float]]
    confusion: Confusion
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        out = asdict(self)
        out["roc_points"] = [list(p) for p in self.roc_points]
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(
            accuracy=data["accuracy"],
            f1=data["f1"],
            auc=data["auc"],
            roc_points=[tuple(p) for p in data["roc_points"]],
            confusion=Confusion(**data["confusion"]),
            extra=data.get("extra", {}),
        )


def _pair(predictions, labels):
    p = np.asarray(predictions).ravel()
    y = np.asarray(labels).ravel()
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise EmptyInput("no predictions")
    return p.astype(np.int64), y.astype(np.int64)


def accuracy(predictions, labels) -> float:
    p, y = _pair(predictions, labels)
    return float(np.mean(p == y))


def confusion(predictions, labels) -> Confusion:
    p, y = _pair(predictions, labels)
    return Confusion(
        tp=int(np.sum((p == 1) & (y == 1))),
        fp=int(np.sum((p == 1) & (y == 0))),
        tn=int(np.sum((p == 0) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
    )


def f1(c: Confusion) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 0.0 if denom == 0 else 2 * c.tp / denom


def roc_curve(scores, labels):
    """(fpr, tpr) points from a descending sweep over the distinct scores.

    Tied scores move together, so a tie between classes gives a diagonal step.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedRoc("ROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[last_of_group]
    fps = np.cumsum(~y)[last_of_group]
    points = [(0.0, 0.0)]
    points += [(fp / n_neg, tp / n_pos) for tp, fp in zip(tps.tolist(), fps.tolist())]
    return points


def roc_auc(scores, labels):
    points = roc_curve(scores, labels)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return points, area


def evaluate(scores, labels, threshold=0.5) -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    preds = (scores > threshold).astype(np.int64)
    c = confusion(preds, labels)
    try:
        points, auc = roc_auc(scores, labels)
    except UndefinedRoc:
        points, auc = [], None
    return EvalReport(accuracy(preds, labels), f1(c), auc, points, c)


@dataclass
class Diagnosis:
    overfit: bool
    gap: float
    val_loss_rising: bool
    reason: str


def overfit_check(history, gap_threshold=0.05) -> Diagnosis:
    rows = history.rows
    if len(rows) < 2:
        return Diagnosis(False, 0.0, False, "insufficient history")
    gap = rows[-1]["train_acc"] - rows[-1]["val_acc"]
    q = max(2, math.ceil(len(rows) / 4))
    tail = rows[-q:]
    rising = tail[-1]["val_loss"] > tail[0]["val_loss"] and tail[-1]["train_loss"] < tail[0]["train_loss"]
    reasons = []
    if gap > gap_threshold:
        reasons.append(f"train/val accuracy gap {gap:.3f} > {gap_threshold}")
    if rising:
        reasons.append("validation loss rose while training loss fell over the last quarter")
    return Diagnosis(bool(reasons), float(gap), rising, "; ".join(reasons) or "ok")


def accuracy_summary(history):
    """Final, best and mean validation accuracy, and final training accuracy."""
    val = history.column("val_acc")
    return {
        "final_val_acc": float(val[-1]),
        "best_val_acc": float(val.max()),
        "mean_val_acc": float(val.mean()),
        "final_train_acc": float(history.column("train_acc")[-1]),
    }


def emit_report(report: EvalReport, history, path_prefix, plots=True):
    """Write ``<prefix>report.json``, ``<prefix>history.csv`` and SVG figures.

    Returns the written paths keyed by kind.
    """
    from .dnn import history_to_csv

    prefix = str(path_prefix)
    paths = {"report": Path(prefix + "report.json"), "history": Path(prefix + "history.csv")}
    try:
        paths["report"].parent.mkdir(parents=True, exist_ok=True)
        payload = report.to_dict()
        if history is not None and len(history):
            payload["history_summary"] = accuracy_summary(history)
            payload["overfit"] = asdict(overfit_check(history))
        paths["report"].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        if history is not None:
            paths["history"].write_text(history_to_csv(history))
        else:
            del paths["history"]
        if plots:
            from . import plots as plotting

            if history is not None and len(history):
                paths["accuracy_plot"] = plotting.plot_accuracy(history, prefix + "accuracy.svg")
                paths["loss_plot"] = plotting.plot_loss(history, prefix + "loss.svg")
            if report.roc_points:
                paths["roc_plot"] = plotting.plot_roc(report, prefix + "roc.svg")
    except OSError as exc:
        raise OSError(f"writing report under {prefix!r}: {exc}") from exc
    return paths


def read_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))
