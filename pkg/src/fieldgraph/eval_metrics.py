"""Threshold metrics and report assembly for node predictions.

Predictions are binarized at an inclusive threshold. Counts only ever
cover valid nodes. Ratios with a zero denominator are reported as 0 and
flip the degenerate flag instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMask, LengthMismatch
from .train import dice_loss

DEFAULT_THRESHOLD = 0.4
DEFAULT_PR_POINTS = 99


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
        )


@dataclass(frozen=True)
class MetricSet:
    precision: float
    recall: float
    f1: float
    iou: float
    degenerate: bool


@dataclass(frozen=True)
class PrPoint:
    threshold: float
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class PrCurve:
    points: list[PrPoint]
    best_threshold: float  # highest f1, ties resolved to the lowest threshold


@dataclass
class EvalReport:
    threshold: float
    dice_loss: float          # mean of per-field dice losses
    dice_loss_pooled: float   # dice over all valid nodes pooled together
    precision: float
    recall: float
    f1: float
    iou: float
    degenerate: bool
    counts: ConfusionCounts
    per_field: list[dict] = field(default_factory=list)


def binarize(pred: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Label nodes positive where pred >= threshold (inclusive)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(pred, dtype=np.float64) >= threshold).astype(np.int64)


def confusion(
    pred_labels: np.ndarray, targets: np.ndarray, valid_mask: np.ndarray
) -> ConfusionCounts:
    """Confusion counts over valid nodes."""
    pred_labels = np.asarray(pred_labels)
    targets = np.asarray(targets)
    valid = np.asarray(valid_mask).astype(bool)
    if pred_labels.shape != targets.shape or pred_labels.shape != valid.shape:
        raise LengthMismatch(
            f"labels {pred_labels.shape}, targets {targets.shape}, "
            f"mask {valid.shape} differ"
        )
    p = pred_labels[valid] != 0
    t = targets[valid] != 0
    return ConfusionCounts(
        tp=int(np.sum(p & t)),
        fp=int(np.sum(p & ~t)),
        fn=int(np.sum(~p & t)),
        tn=int(np.sum(~p & ~t)),
    )


def metrics(counts: ConfusionCounts) -> MetricSet:
    """Precision, recall, f1 = 2pr/(p+r), and IOU from one set of counts."""
    degenerate = False

    def ratio(num: float, den: float) -> float:
        nonlocal degenerate
        if den == 0:
            degenerate = True
            return 0.0
        return num / den

    precision = ratio(counts.tp, counts.tp + counts.fp)
    recall = ratio(counts.tp, counts.tp + counts.fn)
    f1 = ratio(2.0 * precision * recall, precision + recall)
    iou = ratio(counts.tp, counts.tp + counts.fp + counts.fn)
    return MetricSet(
        precision=precision, recall=recall, f1=f1, iou=iou, degenerate=degenerate
    )


def pr_curve(
    preds: np.ndarray,
    targets: np.ndarray,
    valid_mask: np.ndarray,
    n_thresholds: int = DEFAULT_PR_POINTS,
) -> PrCurve:
    """Metrics on n_thresholds evenly spaced cut points inside (0, 1)."""
    if n_thresholds < 1:
        raise ValueError(f"n_thresholds must be positive, got {n_thresholds}")
    points = []
    best_f1 = -1.0
    best_threshold = 0.0
    for i in range(1, n_thresholds + 1):
        tau = i / (n_thresholds + 1)
        m = metrics(confusion(binarize(preds, tau), targets, valid_mask))
        points.append(
            PrPoint(threshold=tau, precision=m.precision, recall=m.recall, f1=m.f1)
        )
        if m.f1 > best_f1:
            best_f1 = m.f1
            best_threshold = tau
    return PrCurve(points=points, best_threshold=best_threshold)


def evaluate_fields(
    entries: list[tuple[str, np.ndarray, np.ndarray, np.ndarray]],
    threshold: float = DEFAULT_THRESHOLD,
    dice_epsilon: float = 1e-6,
) -> EvalReport:
    """Per-field and micro-averaged metrics for (id, preds, targets, mask) rows.

    Pooled counts give the headline precision/recall/f1/iou; the headline
    dice is the mean of per-field dice losses, with the pooled variant
    reported alongside.
    """
    if not entries:
        raise EmptyMask("no fields to evaluate")
    per_field = []
    pooled = ConfusionCounts(0, 0, 0, 0)
    dice_values = []
    all_preds = []
    all_targets = []
    for source_id, preds, targets, valid_mask in entries:
        counts = confusion(binarize(preds, threshold), targets, valid_mask)
        m = metrics(counts)
        d = dice_loss(preds, targets, valid_mask, dice_epsilon)
        pooled = pooled + counts
        dice_values.append(d)
        valid = np.asarray(valid_mask).astype(bool)
        all_preds.append(np.asarray(preds, dtype=np.float64)[valid])
        all_targets.append(np.asarray(targets, dtype=np.float64)[valid])
        per_field.append(
            {
                "source_id": source_id,
                "dice_loss": d,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "iou": m.iou,
                "tp": counts.tp,
                "fp": counts.fp,
                "fn": counts.fn,
                "tn": counts.tn,
            }
        )
    pooled_pred = np.concatenate(all_preds)
    pooled_target = np.concatenate(all_targets)
    pooled_dice = dice_loss(
        pooled_pred, pooled_target, np.ones(len(pooled_pred), dtype=bool), dice_epsilon
    )
    m = metrics(pooled)
    return EvalReport(
        threshold=threshold,
        dice_loss=float(np.mean(dice_values)),
        dice_loss_pooled=pooled_dice,
        precision=m.precision,
        recall=m.recall,
        f1=m.f1,
        iou=m.iou,
        degenerate=m.degenerate,
        counts=pooled,
        per_field=per_field,
    )


def report_to_dict(report: EvalReport) -> dict:
    """JSON-ready view of a report."""
    return {
        "threshold": report.threshold,
        "dice_loss": report.dice_loss,
        "dice_loss_pooled": report.dice_loss_pooled,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "iou": report.iou,
        "degenerate": report.degenerate,
        "counts": {
            "tp": report.counts.tp,
            "fp": report.counts.fp,
            "fn": report.counts.fn,
            "tn": report.counts.tn,
        },
        "per_field": report.per_field,
    }


def format_report_row(report: EvalReport) -> str:
    """One aligned text row of the headline metrics."""
    header = "threshold  dice   dice_pooled  precision  recall  f1     iou"
    row = (
        f"{report.threshold:<9.2f}  {report.dice_loss:<5.3f}  "
        f"{report.dice_loss_pooled:<11.3f}  {report.precision:<9.3f}  "
        f"{report.recall:<6.3f}  {report.f1:<5.3f}  {report.iou:<5.3f}"
    )
    return header + "\n" + row
