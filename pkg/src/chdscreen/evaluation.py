"""Train/score helpers, patient-wise k-fold cross-validation and feature-group ablation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .audio_io import PatientManifest, SplitAssignment, kfold_patients
from .estimator import FusionCNNClassifier
from .exceptions import EmptyDataset, EmptyGroup
from .handcrafted import HRV_NAMES, SPECTRAL_NAMES
from .metrics import AVERAGE_PROB, EvalReport, evaluate_patients, mean_sd
from .pipeline import FeatureCache

logger = logging.getLogger(__name__)

GROUP_MFCC = "MFCC"
GROUP_HRV = "HRV"
GROUP_SPECTRAL = "spectral"
FEATURE_GROUPS = (GROUP_MFCC, GROUP_HRV, GROUP_SPECTRAL)
GROUP_COLUMNS = {
    GROUP_HRV: list(range(len(HRV_NAMES))),
    GROUP_SPECTRAL: list(range(len(HRV_NAMES), len(HRV_NAMES) + len(SPECTRAL_NAMES))),
}
DEFAULT_ABLATION = (
    (GROUP_MFCC, GROUP_HRV, GROUP_SPECTRAL),
    (GROUP_MFCC,),
    (GROUP_MFCC, GROUP_HRV),
    (GROUP_MFCC, GROUP_SPECTRAL),
    (GROUP_HRV, GROUP_SPECTRAL),
)
CV_METRICS = ("accuracy", "sensitivity", "specificity", "f1", "auroc", "auprc")


def fit_on_ids(
    cache: FeatureCache,
    manifest: PatientManifest,
    train_ids: Sequence[str],
    validation_ids: Sequence[str] = (),
    **estimator_params,
) -> FusionCNNClassifier:
    """Train a classifier on the recordings of `train_ids`, early-stopping on `validation_ids`."""
    mfcc, hand, y, _ = cache.assemble(manifest, train_ids)
    if len(y) == 0:
        raise EmptyDataset("no cached recordings for the training patients")
    val = None
    if validation_ids:
        v_mfcc, v_hand, v_y, _ = cache.assemble(manifest, validation_ids)
        if len(v_y):
            val = ((v_mfcc, v_hand), v_y)
    est = FusionCNNClassifier(**estimator_params)
    return est.fit((mfcc, hand), y, validation_data=val)


def recording_probs(
    est: FusionCNNClassifier, cache: FeatureCache, manifest: PatientManifest, patient_ids: Sequence[str]
) -> Dict[str, List[Tuple[str, float]]]:
    """``{patient_id: [(site, prob_CHD), ...]}`` for every cached recording of the given patients."""
    mfcc, hand, _, keys = cache.assemble(manifest, patient_ids)
    out: Dict[str, List[Tuple[str, float]]] = {}
    if not keys:
        return out
    probs = est.predict_proba((mfcc, hand))[:, 1]
    for (pid, site), p in zip(keys, probs):
        out.setdefault(pid, []).append((site, float(p)))
    return out


@dataclass
class FoldResult:
    fold: int
    test_ids: List[str]
    validation_ids: List[str]
    report: EvalReport
    best_epoch: int

    def metrics(self) -> Dict[str, Optional[float]]:
        c = self.report.confusion
        return {
            "accuracy": c.accuracy,
            "sensitivity": c.sensitivity,
            "specificity": c.specificity,
            "f1": c.f1,
            "auroc": self.report.auroc,
            "auprc": self.report.auprc,
        }


@dataclass
class CVReport:
    k: int
    seed: int
    folds: List[FoldResult]
    pooled: EvalReport
    summary: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "method": self.pooled.method,
            "folds": [
                {"fold": f.fold, "n_test": len(f.test_ids), "best_epoch": f.best_epoch, **f.metrics()}
                for f in self.folds
            ],
            "summary": self.summary,
            "pooled_out_of_fold": {
                "auroc": self.pooled.auroc,
                "auprc": self.pooled.auprc,
                "accuracy": self.pooled.accuracy,
            },
        }


def cross_validate(
    manifest: PatientManifest,
    cache: FeatureCache,
    k: int = 5,
    seed: int = 0,
    threshold: float = 0.5,
    **estimator_params,
) -> CVReport:
    """Patient-wise, label-stratified k-fold CV with AverageProb aggregation.

    Fold ``i`` is held out for testing, fold ``(i + 1) % k`` drives early
    stopping and the remaining folds train. Each fold's model uses
    ``random_state = seed + i``; normalization statistics and class weights
    are refit inside every fold.
    """
    folds = kfold_patients(manifest, k, seed)
    labels = manifest.labels()
    results, pooled = [], {}
    for i in range(k):
        test_ids = folds[i]
        val_ids = folds[(i + 1) % k] if k > 2 else []
        train_ids = [p for j, f in enumerate(folds) if j != i and (k == 2 or j != (i + 1) % k) for p in f]
        params = dict(estimator_params, random_state=seed + i)
        est = fit_on_ids(cache, manifest, train_ids, val_ids, **params)
        probs = recording_probs(est, cache, manifest, test_ids)
        report = evaluate_patients(probs, labels, AVERAGE_PROB, threshold)
        results.append(FoldResult(i, list(test_ids), list(val_ids), report, est.best_epoch_))
        pooled.update(probs)
        logger.info("fold %d: accuracy %s auroc %s", i, report.accuracy, report.auroc)
    summary = {}
    for name in CV_METRICS:
        mean, sd = mean_sd(f.metrics()[name] for f in results)
        summary[name] = {"mean": mean, "sd": sd}
    return CVReport(k, seed, results, evaluate_patients(pooled, labels, AVERAGE_PROB, threshold), summary)


def group_settings(group: Iterable[str]) -> Tuple[bool, List[int]]:
    """Map a feature group such as ``("MFCC", "HRV")`` to ``(use_mfcc, handcrafted_columns)``."""
    names = list(group)
    if not names:
        raise EmptyGroup("feature group must name at least one of MFCC, HRV, spectral")
    lookup = {g.lower(): g for g in FEATURE_GROUPS}
    canon = []
    for n in names:
        if n.lower() not in lookup:
            raise EmptyGroup(f"unknown feature group {n!r}; expected one of {FEATURE_GROUPS}")
        canon.append(lookup[n.lower()])
    cols = [c for g in (GROUP_HRV, GROUP_SPECTRAL) if g in canon for c in GROUP_COLUMNS[g]]
    return GROUP_MFCC in canon, cols


def group_name(group: Iterable[str]) -> str:
    return "+".join(group)


def ablate(
    manifest: PatientManifest,
    cache: FeatureCache,
    split: SplitAssignment,
    groups: Sequence[Sequence[str]] = DEFAULT_ABLATION,
    threshold: float = 0.5,
    **estimator_params,
) -> List[dict]:
    """One training run per feature group on the same split and seed; test-set accuracy and AUROC."""
    if not groups:
        raise EmptyGroup("no feature groups given")
    settings = [group_settings(g) for g in groups]
    labels = manifest.labels()
    rows = []
    for group, (use_mfcc, cols) in zip(groups, settings):
        params = dict(estimator_params, use_mfcc=use_mfcc, handcrafted_columns=cols)
        est = fit_on_ids(cache, manifest, split.train, split.validation, **params)
        report = evaluate_patients(recording_probs(est, cache, manifest, split.test), labels, AVERAGE_PROB, threshold)
        rows.append({"group": group_name(group), "accuracy": report.accuracy, "auroc": report.auroc})
        logger.info("ablation %s: accuracy %s auroc %s", rows[-1]["group"], report.accuracy, report.auroc)
    return rows
