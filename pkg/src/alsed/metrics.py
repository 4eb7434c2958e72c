"""Segment- and event-level evaluation metrics.

The headline number is total IoU: per event class, intersection over union
of predicted and true segment sets across the whole evaluation corpus,
averaged over event classes (the background class never enters). Event
recall and F1 come from greedy one-to-one matching of predicted to true
events at an interval-IoU threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class MetricsRow:
    total_iou: float
    recall: float
    f1: float
    per_class_iou: tuple[float, ...]
    n_true_events: int
    n_pred_events: int
    n_matched: int


def total_iou(
    pred_labels: np.ndarray, true_labels: np.ndarray, n_event_classes: int
) -> tuple[float, tuple[float, ...]]:
    """Mean per-class segment IoU over event classes 1..n_event_classes.

    Both label arrays cover the same concatenated segment sequence. A class
    absent from prediction and truth alike scores 1.0 (empty union).
    """
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape:
        raise ValueError("label arrays differ in shape")
    if n_event_classes < 1:
        raise ValueError("n_event_classes must be >= 1")
    per_class = []
    for c in range(1, n_event_classes + 1):
        p = pred == c
        t = true == c
        union = int(np.logical_or(p, t).sum())
        if union == 0:
            per_class.append(1.0)
        else:
            per_class.append(int(np.logical_and(p, t).sum()) / union)
    return float(np.mean(per_class)), tuple(per_class)


def interval_iou(a_start: int, a_end: int, b_start: int, b_end: int) -> float:
    """IoU of two inclusive segment ranges, counted in segments."""
    inter = min(a_end, b_end) - max(a_start, b_start) + 1
    if inter <= 0:
        return 0.0
    union = max(a_end, b_end) - min(a_start, b_start) + 1
    return inter / union


def match_events(
    pred_events: Sequence, true_events: Sequence, iou_threshold: float = 0.5
) -> list[tuple[int, int]]:
    """Greedy one-to-one matching of predicted to true events.

    Candidate pairs require equal class_id and interval IoU >= threshold;
    pairs are taken in descending IoU order (ties by predicted index, then
    true index), each event used at most once. Returns (pred_idx, true_idx)
    pairs. At threshold >= 0.5 same-class true events are disjoint intervals
    and each predicted event can clear the bar with at most one true event
    (and vice versa), so the greedy result is also maximum-cardinality.
    """
    if not (0 < iou_threshold <= 1):
        raise ValueError("iou_threshold must lie in (0, 1]")
    candidates: list[tuple[float, int, int]] = []
    for pi, p in enumerate(pred_events):
        for ti, t in enumerate(true_events):
            if p.class_id != t.class_id:
                continue
            iou = interval_iou(
                p.start_segment, p.end_segment, t.start_segment, t.end_segment
            )
            if iou >= iou_threshold:
                candidates.append((iou, pi, ti))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_p: set[int] = set()
    used_t: set[int] = set()
    matches: list[tuple[int, int]] = []
    for _, pi, ti in candidates:
        if pi in used_p or ti in used_t:
            continue
        used_p.add(pi)
        used_t.add(ti)
        matches.append((pi, ti))
    return matches


def recall_f1(
    matching: Sequence[tuple[int, int]] | int, n_true: int, n_pred: int
) -> tuple[float, float]:
    """Event recall and F1 from a matching (a pair list, or just its size);
    degenerate denominators give 0."""
    n_matched = matching if isinstance(matching, int) else len(matching)
    recall = n_matched / n_true if n_true > 0 else 0.0
    precision = n_matched / n_pred if n_pred > 0 else 0.0
    if precision + recall == 0:
        return recall, 0.0
    return recall, 2 * precision * recall / (precision + recall)


def event_averaged_iou(pred_events: Sequence, true_events: Sequence) -> float:
    """Alternate headline metric: mean over true events of the best
    same-class interval IoU against any predicted event (0 when nothing
    overlaps; 0 when there are no true events)."""
    if not true_events:
        return 0.0
    best = []
    for t in true_events:
        ious = [
            interval_iou(
                p.start_segment, p.end_segment, t.start_segment, t.end_segment
            )
            for p in pred_events
            if p.class_id == t.class_id
        ]
        best.append(max(ious, default=0.0))
    return float(np.mean(best))
