"""Segment extraction, segmental F1@tau and sample-wise accuracy."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

DEFAULT_THRESHOLDS = (0.10, 0.25, 0.50)


class DataError(ValueError):
    pass


class Segment(NamedTuple):
    label: int
    start: int  # inclusive
    end: int  # exclusive

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class F1Entry:
    threshold: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return asdict(self)


def extract_segments(labels) -> list[Segment]:
    """Maximal runs of constant label, in temporal order."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [labels.size]))
    return [Segment(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = max(a.end, b.end) - min(a.start, b.start)
    return inter / union


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = tp + 0.5 * (fp + fn)
    if denom == 0:
        return 1.0
    return tp / denom


def match_segments(pred: Sequence[Segment], gt: Sequence[Segment], threshold: float) -> tuple[int, int, int]:
    """Greedy left-to-right matching; returns (TP, FP, FN).

    Each predicted segment picks the unmatched same-class ground-truth segment
    of highest IoU (earliest start on ties) and is a true positive when that
    IoU is at least ``threshold``.
    """
    matched = [False] * len(gt)
    tp = fp = 0
    for p in pred:
        best, best_iou = -1, -1.0
        for k, g in enumerate(gt):
            if matched[k] or g.label != p.label:
                continue
            score = iou(p, g)
            if score > best_iou or (score == best_iou and g.start < gt[best].start):
                best, best_iou = k, score
        if best >= 0 and best_iou >= threshold:
            matched[best] = True
            tp += 1
        else:
            fp += 1
    return tp, fp, len(gt) - tp


def f1_from_segments(pred: Sequence[Segment], gt: Sequence[Segment], threshold: float) -> F1Entry:
    tp, fp, fn = match_segments(pred, gt, threshold)
    precision = tp / (tp + fp) if tp + fp else float(not gt)
    recall = tp / (tp + fn) if tp + fn else float(not pred)
    return F1Entry(threshold, tp, fp, fn, precision, recall, f1_score(tp, fp, fn))


def _check_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise DataError(f"prediction length {pred.shape} differs from ground truth {gt.shape}")
    return pred, gt


def f1_at_tau(pred, gt, threshold: float) -> F1Entry:
    pred, gt = _check_pair(pred, gt)
    return f1_from_segments(extract_segments(pred), extract_segments(gt), threshold)


def f1_report(pred, gt, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> list[F1Entry]:
    pred, gt = _check_pair(pred, gt)
    ps, gs = extract_segments(pred), extract_segments(gt)
    return [f1_from_segments(ps, gs, t) for t in thresholds]


def sample_accuracy(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt)
    if pred.size == 0:
        return 1.0
    return float(np.mean(pred == gt))
