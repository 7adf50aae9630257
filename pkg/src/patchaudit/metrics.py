"""Confusion-matrix metrics, rank-based AUC, and ROC curves.

Undefined metrics (empty denominators, single-class AUC) are reported as
None in MetricSet and as nan by the array-level helpers; they are never
silently coerced to 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .records import PredictionRecord, derive_predicted

METRIC_NAMES = ("accuracy", "auc", "recall", "precision", "f1", "fnr", "fpr")


class MetricError(ValueError):
    """Raised when a metric is requested on an unusable subset."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp


@dataclass(frozen=True)
class MetricSet:
    """The audit's metric panel; None marks an undefined value."""

    accuracy: float | None
    auc: float | None
    recall: float | None
    precision: float | None
    f1: float | None
    fnr: float | None
    fpr: float | None

    def get(self, name: str) -> float | None:
        if name not in METRIC_NAMES:
            raise KeyError(f"unknown metric {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class RocCurve:
    """ROC points ordered by descending threshold, endpoints included."""

    thresholds: tuple[float, ...]
    fpr: tuple[float, ...]
    tpr: tuple[float, ...]

    def __post_init__(self):
        if len(self.thresholds) != len(self.fpr) or len(self.fpr) != len(self.tpr):
            raise ValueError("threshold/fpr/tpr lengths differ")
        if (self.fpr[0], self.tpr[0]) != (0.0, 0.0) or (self.fpr[-1], self.tpr[-1]) != (1.0, 1.0):
            raise ValueError("ROC curve must run from (0,0) to (1,1)")

    @property
    def area(self) -> float:
        f = np.asarray(self.fpr)
        t = np.asarray(self.tpr)
        return float(np.trapezoid(t, f))


def label_arrays(
    records: Sequence[PredictionRecord], threshold: float = 0.5
) -> tuple[np.ndarray, np.ndarray]:
    """(truth, predicted) uint8 arrays; prediction derived at the threshold."""
    truth = np.fromiter((r.truth for r in records), dtype=np.uint8, count=len(records))
    pred = np.fromiter(
        (derive_predicted(r, threshold) for r in records),
        dtype=np.uint8,
        count=len(records),
    )
    return truth, pred


def score_array(records: Sequence[PredictionRecord]) -> np.ndarray:
    """Scores as float64 with nan marking records that have none."""
    return np.fromiter(
        (math.nan if r.score is None else r.score for r in records),
        dtype=np.float64,
        count=len(records),
    )


def confusion(records: Sequence[PredictionRecord], threshold: float = 0.5) -> ConfusionCounts:
    if not records:
        raise MetricError("cannot compute a confusion matrix on an empty subset")
    truth, pred = label_arrays(records, threshold)
    tp, fp, tn, fn = kernels.confusion_counts(truth, pred)
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


def metric_set(
    counts: ConfusionCounts,
    records: Sequence[PredictionRecord] | None = None,
) -> MetricSet:
    """Metric panel from counts; AUC is added when scored records are given."""
    if records is not None and counts.total != len(records):
        raise MetricError(
            f"counts cover {counts.total} records but subset has {len(records)}"
        )
    recall = _ratio(counts.tp, counts.positives)
    precision = _ratio(counts.tp, counts.tp + counts.fp)
    f1 = None
    if recall is not None and precision is not None and (precision + recall) > 0:
        f1 = 2 * precision * recall / (precision + recall)
    auc_value = None
    if records is not None:
        a = auc(records)
        auc_value = None if math.isnan(a) else a
    return MetricSet(
        accuracy=_ratio(counts.tp + counts.tn, counts.total),
        auc=auc_value,
        recall=recall,
        precision=precision,
        f1=f1,
        fnr=_ratio(counts.fn, counts.positives),
        fpr=_ratio(counts.fp, counts.negatives),
    )


def auc(records: Sequence[PredictionRecord]) -> float:
    """Probability a random positive outscores a random negative (ties get
    half credit), over records that carry scores.  nan when undefined."""
    scored = [r for r in records if r.score is not None]
    if not scored:
        return math.nan
    truth = np.fromiter((r.truth for r in scored), dtype=np.uint8, count=len(scored))
    scores = np.fromiter((r.score for r in scored), dtype=np.float64, count=len(scored))
    return kernels.rank_auc(truth, scores)


def roc_curve(records: Sequence[PredictionRecord]) -> RocCurve:
    """One point per distinct score threshold, endpoints included."""
    scored = [r for r in records if r.score is not None]
    n_pos = sum(r.truth for r in scored)
    n_neg = len(scored) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC needs at least one scored positive and negative")
    truth = np.fromiter((r.truth for r in scored), dtype=np.int64, count=len(scored))
    scores = np.fromiter((r.score for r in scored), dtype=np.float64, count=len(scored))
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = truth[order]
    # cumulative counts at each distinct threshold (last index of each run)
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    cum_tp = np.cumsum(t)[last]
    cum_fp = (last + 1) - cum_tp
    thresholds = (math.inf,) + tuple(s[last])
    tpr = (0.0,) + tuple(cum_tp / n_pos)
    fpr = (0.0,) + tuple(cum_fp / n_neg)
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr)
