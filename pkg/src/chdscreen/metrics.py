"""Patient-level decision aggregation, confusion metrics, ROC and precision-recall curves."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigError, LengthMismatch, NoPositives, NoRecordings, SingleClassOnly

AT_LEAST_ONE = "AtLeastOne"
MAJORITY = "Majority"
AVERAGE_PROB = "AverageProb"
METHODS = (AT_LEAST_ONE, MAJORITY, AVERAGE_PROB)


def aggregate_patient(probs: Sequence[float], method: str = AVERAGE_PROB, threshold: float = 0.5) -> Tuple[float, str]:
    """Combine one patient's per-recording CHD probabilities into a decision.

    AtLeastOne: CHD if any recording reaches `threshold` (score = max).
    Majority: CHD if strictly more than half do (score = fraction positive).
    AverageProb: CHD if the mean probability reaches `threshold` (score = mean).
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.size == 0:
        raise NoRecordings("cannot aggregate a patient without recordings")
    positive = p >= threshold
    if method == AT_LEAST_ONE:
        score, chd = float(p.max()), bool(positive.any())
    elif method == MAJORITY:
        score, chd = float(positive.mean()), bool(positive.sum() * 2 > p.size)
    elif method == AVERAGE_PROB:
        score = float(p.mean())
        chd = score >= threshold
    else:
        raise ConfigError(f"unknown aggregation method {method!r}; expected one of {METHODS}")
    return score, "CHD" if chd else "NonCHD"


def _as01(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind in "USO":
        return (arr == "CHD").astype(np.int64)
    return arr.astype(np.int64)


@dataclass
class ConfusionMetrics:
    tp: int
    tn: int
    fp: int
    fn: int

    @staticmethod
    def _ratio(num, den) -> Optional[float]:
        return num / den if den else None

    @property
    def accuracy(self) -> Optional[float]:
        return self._ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn)

    @property
    def sensitivity(self) -> Optional[float]:
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def specificity(self) -> Optional[float]:
        return self._ratio(self.tn, self.tn + self.fp)

    @property
    def f1(self) -> Optional[float]:
        return self._ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn)

    @property
    def undefined(self) -> List[str]:
        return [m for m in ("accuracy", "sensitivity", "specificity", "f1") if getattr(self, m) is None]

    def to_dict(self) -> dict:
        return {
            "counts": {"TP": self.tp, "TN": self.tn, "FP": self.fp, "FN": self.fn},
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "f1": self.f1,
            "undefined_metrics": self.undefined,
        }


def confusion_metrics(decisions, labels) -> ConfusionMetrics:
    """Counts and derived metrics; a zero denominator yields ``None`` for that metric only."""
    d, y = _as01(decisions), _as01(labels)
    if d.shape != y.shape:
        raise LengthMismatch(f"{d.size} decisions vs {y.size} labels")
    return ConfusionMetrics(
        tp=int(np.sum((d == 1) & (y == 1))),
        tn=int(np.sum((d == 0) & (y == 0))),
        fp=int(np.sum((d == 1) & (y == 0))),
        fn=int(np.sum((d == 0) & (y == 1))),
    )


def _threshold_counts(scores, labels):
    """Cumulative (TP, FP) after admitting each distinct score, highest first."""
    s = np.asarray(scores, dtype=np.float64)
    y = _as01(labels)
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.size} scores vs {y.size} labels")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(1 - y)[last_of_group]
    return s[last_of_group], tp, fp, int(y.sum()), int(y.size - y.sum())


def roc_auroc(scores, labels):
    """ROC points ``[(fpr, tpr), ...]`` from (0, 0) and the trapezoidal area.

    Tied scores move the curve diagonally, so ties count one half, matching
    the rank (Mann-Whitney) formulation.
    """
    _, tp, fp, n_pos, n_neg = _threshold_counts(scores, labels)
    if n_pos == 0 or n_neg == 0:
        raise SingleClassOnly("ROC needs both positive and negative labels")
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    points = list(zip((fp / n_neg).tolist(), (tp / n_pos).tolist()))
    return points, twice_area / (2 * n_pos * n_neg)


def pr_auprc(scores, labels):
    """Precision-recall points ``[(recall, precision), ...]`` and the step-wise area.

    Area = sum over thresholds of (recall increase) x precision, no interpolation.
    """
    _, tp, fp, n_pos, _ = _threshold_counts(scores, labels)
    if n_pos == 0:
        raise NoPositives("precision-recall needs at least one positive label")
    recall = tp / n_pos
    precision = tp / (tp + fp)
    auprc = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    points = [(0.0, 1.0)] + list(zip(recall.tolist(), precision.tolist()))
    return points, auprc


@dataclass
class PatientPrediction:
    patient_id: str
    recordings: List[Tuple[str, float]]
    aggregated_prob: float
    decision: str
    method: str
    threshold: float = 0.5
    label: Optional[str] = None

    def to_dict(self) -> dict:
        d = {
            "patient_id": self.patient_id,
            "recordings": [{"site": s, "prob_CHD": p} for s, p in self.recordings],
            "aggregated_prob": self.aggregated_prob,
            "decision": self.decision,
        }
        if self.label is not None:
            d["label"] = self.label
        return d


@dataclass
class EvalReport:
    method: str
    threshold: float
    confusion: ConfusionMetrics
    roc: List[Tuple[float, float]]
    auroc: Optional[float]
    pr: List[Tuple[float, float]]
    auprc: Optional[float]
    patients: List[PatientPrediction] = field(default_factory=list)

    @property
    def accuracy(self):
        return self.confusion.accuracy

    def to_dict(self) -> dict:
        d = {"method": self.method, "threshold": self.threshold}
        d.update(self.confusion.to_dict())
        d.update(
            auroc=self.auroc,
            auprc=self.auprc,
            roc=[list(p) for p in self.roc],
            pr=[list(p) for p in self.pr],
            patients=[p.to_dict() for p in self.patients],
        )
        return d


def evaluate_patients(
    recording_probs: Dict[str, List[Tuple[str, float]]],
    labels: Dict[str, str],
    method: str = AVERAGE_PROB,
    threshold: float = 0.5,
) -> EvalReport:
    """Aggregate per-recording probabilities per patient and score against labels.

    `recording_probs` maps patient id to ``[(site, prob_CHD), ...]``. The
    aggregated score of each patient drives the ROC and PR curves.
    """
    preds = []
    for pid in sorted(recording_probs):
        recs = recording_probs[pid]
        score, decision = aggregate_patient([p for _, p in recs], method, threshold)
        preds.append(PatientPrediction(pid, list(recs), score, decision, method, threshold, labels[pid]))
    y = np.array([int(p.label == "CHD") for p in preds])
    scores = np.array([p.aggregated_prob for p in preds])
    confusion = confusion_metrics([p.decision for p in preds], [p.label for p in preds])
    roc, auroc = ([], None)
    if 0 < y.sum() < y.size:
        roc, auroc = roc_auroc(scores, y)
    pr, auprc = ([], None)
    if y.sum() > 0:
        pr, auprc = pr_auprc(scores, y)
    return EvalReport(method, threshold, confusion, roc, auroc, pr, auprc, preds)


def mean_sd(values) -> Tuple[float, float]:
    """Mean and sample (n-1) standard deviation."""
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0
