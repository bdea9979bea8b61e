from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from common.errors import ConfigurationError
from patch_tools.boxes import BoundingBox, iou

DEFAULT_IOU_THRESHOLDS: tuple[float, ...] = (0.5, 0.75, 0.90)


@dataclass(frozen=True)
class LabeledPrediction:
    confidence: float
    is_tp: bool
    matched_gt: int | None = None
    iou: float = 0.0


@dataclass(frozen=True)
class MatchResult:
    labels: tuple[LabeledPrediction, ...]
    fn_count: int

    @property
    def tp(self) -> int:
        return sum(1 for lab in self.labels if lab.is_tp)

    @property
    def fp(self) -> int:
        return len(self.labels) - self.tp


@dataclass(frozen=True)
class DetectionRecord:
    iou_threshold: float
    precision: float
    recall: float
    f1: float
    ap: float
    tp: int
    fp: int
    fn: int


@dataclass
class DetectionEvalReport:
    thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    records: dict[float, DetectionRecord] = field(default_factory=dict)

    def __getitem__(self, threshold: float) -> DetectionRecord:
        return self.records[threshold]

    def to_frame(self) -> pd.DataFrame:
        rows = [vars(self.records[t]) for t in self.thresholds]
        return pd.DataFrame(rows, columns=list(DetectionRecord.__dataclass_fields__))


def match_detections(
    predictions: Sequence[BoundingBox],
    ground_truth: Sequence[BoundingBox],
    iou_threshold: float = 0.5,
    min_confidence: float = 0.0,
) -> MatchResult:
    """Greedy single-class matching.

    Predictions are visited in descending confidence (ties keep input order);
    each takes the unmatched ground truth with the highest IoU at or above
    the threshold (ties go to the lower index).
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ConfigurationError(f"IoU threshold must lie in (0, 1], got {iou_threshold}")
    kept = [p for p in predictions if p.confidence >= min_confidence]
    order = sorted(range(len(kept)), key=lambda i: -kept[i].confidence)
    used = [False] * len(ground_truth)
    labels = []
    for i in order:
        pred = kept[i]
        best, best_iou = None, 0.0
        for j, gt in enumerate(ground_truth):
            if used[j]:
                continue
            overlap = iou(pred, gt)
            if overlap >= iou_threshold and (best is None or overlap > best_iou):
                best, best_iou = j, overlap
        if best is not None:
            used[best] = True
        labels.append(LabeledPrediction(pred.confidence, best is not None, best, best_iou))
    return MatchResult(tuple(labels), fn_count=used.count(False))


def average_precision(labels: Sequence[LabeledPrediction], n_ground_truth: int) -> float:
    """All-point, non-interpolated: sum over ranks of (r_i - r_{i-1}) * p_i."""
    if n_ground_truth == 0 or not labels:
        return 0.0
    ranked = sorted(labels, key=lambda lab: -lab.confidence)
    hits = np.array([lab.is_tp for lab in ranked], dtype=np.float64)
    tp_cum = np.cumsum(hits)
    precision = tp_cum / np.arange(1, len(hits) + 1)
    recall = tp_cum / n_ground_truth
    delta = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(delta * precision))


def detection_metrics(labels: Sequence[LabeledPrediction], fn_count: int, iou_threshold: float = 0.5) -> DetectionRecord:
    tp = sum(1 for lab in labels if lab.is_tp)
    fp = len(labels) - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn_count) if tp + fn_count else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return DetectionRecord(
        iou_threshold=iou_threshold,
        precision=precision,
        recall=recall,
        f1=f1,
        ap=average_precision(labels, tp + fn_count),
        tp=tp,
        fp=fp,
        fn=fn_count,
    )


def evaluate_detections(
    images: Sequence[tuple[Sequence[BoundingBox], Sequence[BoundingBox]]],
    thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
    min_confidence: float = 0.0,
) -> DetectionEvalReport:
    """Match per image, pool the ranked predictions, and score each threshold.

    ``images`` holds one (predictions, ground_truth) pair per source image.
    """
    report = DetectionEvalReport(thresholds=tuple(thresholds))
    for t in report.thresholds:
        pooled: list[LabeledPrediction] = []
        fn = 0
        for predictions, ground_truth in images:
            result = match_detections(predictions, ground_truth, t, min_confidence)
            pooled.extend(result.labels)
            fn += result.fn_count
        report.records[t] = detection_metrics(pooled, fn, t)
    return report
