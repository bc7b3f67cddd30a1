import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chdscreen.exceptions import ConfigError, LengthMismatch, NoPositives, NoRecordings, SingleClassOnly
from chdscreen.metrics import (
    AT_LEAST_ONE,
    AVERAGE_PROB,
    MAJORITY,
    METHODS,
    ConfusionMetrics,
    aggregate_patient,
    confusion_metrics,
    evaluate_patients,
    mean_sd,
    pr_auprc,
    roc_auroc,
)
from oracles import auprc_ref, auroc_pairs_ref

probs_strategy = st.lists(st.floats(0, 1), min_size=1, max_size=8)


class TestAggregation:
    def test_worked_example(self):
        p = [0.9, 0.2, 0.2, 0.2]
        assert aggregate_patient(p, AT_LEAST_ONE) == (0.9, "CHD")
        assert aggregate_patient(p, MAJORITY) == (0.25, "NonCHD")
        score, decision = aggregate_patient(p, AVERAGE_PROB)
        assert abs(score - 0.375) < 1e-15 and decision == "NonCHD"

    @pytest.mark.parametrize("p", [0.1, 0.5, 0.7])
    def test_single_recording(self, p):
        expected = "CHD" if p >= 0.5 else "NonCHD"
        assert {aggregate_patient([p], m)[1] for m in METHODS} == {expected}

    def test_constant_probs(self):
        assert aggregate_patient([0.3] * 4, AVERAGE_PROB)[0] == 0.3

    def test_majority_tie_is_negative(self):
        assert aggregate_patient([0.9, 0.9, 0.1, 0.1], MAJORITY)[1] == "NonCHD"

    def test_errors(self):
        with pytest.raises(NoRecordings):
            aggregate_patient([])
        with pytest.raises(ConfigError):
            aggregate_patient([0.5], "Vote")

    def test_dominance_random(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            p = rng.uniform(size=rng.integers(1, 9))
            alo = aggregate_patient(p, AT_LEAST_ONE)[1]
            maj = aggregate_patient(p, MAJORITY)[1]
            if maj == "CHD":
                assert alo == "CHD"
                assert np.any(p >= 0.5)

    @settings(max_examples=200, deadline=None)
    @given(probs_strategy, st.integers(0, 7), st.floats(0, 1))
    def test_average_monotone(self, p, i, bump):
        i = i % len(p)
        before = aggregate_patient(p, AVERAGE_PROB)[1]
        raised = list(p)
        raised[i] = max(raised[i], bump)
        after = aggregate_patient(raised, AVERAGE_PROB)[1]
        assert not (before == "CHD" and after == "NonCHD")


class TestConfusion:
    def test_example(self):
        c = ConfusionMetrics(tp=9, tn=9, fp=1, fn=1)
        assert (c.accuracy, c.sensitivity, c.specificity, c.f1) == (0.9, 0.9, 0.9, 0.9)

    def test_perfect_and_undefined(self):
        c = confusion_metrics(["CHD", "NonCHD"], ["CHD", "NonCHD"])
        assert (c.accuracy, c.sensitivity, c.specificity, c.f1) == (1.0, 1.0, 1.0, 1.0)
        c = confusion_metrics([0, 1, 0], [0, 0, 0])
        assert c.sensitivity is None and "sensitivity" in c.undefined
        assert c.to_dict()["counts"] == {"TP": 0, "TN": 2, "FP": 1, "FN": 0}

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            confusion_metrics([1, 0], [1])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=2, max_size=60))
    def test_accuracy_identity(self, pairs):
        d, y = zip(*pairs)
        P, N = sum(y), len(y) - sum(y)
        if P == 0 or N == 0:
            return
        c = confusion_metrics(d, y)
        num = c.sensitivity * P + c.specificity * N
        assert abs(c.accuracy - num / (P + N)) < 1e-12
        assert c.tp + c.fn == P and c.tn + c.fp == N


class TestRoc:
    def test_examples(self):
        assert roc_auroc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0])[1] == 1.0
        assert roc_auroc([0.9, 0.8, 0.3, 0.1], [0, 1, 0, 1])[1] == 0.25
        with pytest.raises(SingleClassOnly):
            roc_auroc([0.1, 0.2], [1, 1])

    def test_pairs_identity_1000_sets(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            n = int(rng.integers(2, 40))
            scores = rng.integers(0, 8, n) / 8.0
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            assert abs(roc_auroc(scores, labels)[1] - auroc_pairs_ref(scores, labels)) <= 1e-12

    def test_curve_endpoints(self, rng):
        pts, _ = roc_auroc(rng.uniform(size=30), np.r_[np.ones(10), np.zeros(20)])
        assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
        assert all(b[0] >= a[0] and b[1] >= a[1] for a, b in zip(pts, pts[1:]))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000))
    def test_monotone_transform_invariance(self, seed):
        r = np.random.default_rng(seed)
        scores = r.integers(-20, 20, 25) / 10.0
        labels = np.r_[[0, 1], r.integers(0, 2, 23)]
        base = roc_auroc(scores, labels)[1]
        assert roc_auroc(np.exp(scores), labels)[1] == base
        assert roc_auroc(3.0 * scores + 7.0, labels)[1] == base


class TestPr:
    def test_perfect_and_constant(self):
        assert pr_auprc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0])[1] == 1.0
        assert pr_auprc([0.5] * 8, [1, 0, 0, 1, 0, 0, 0, 1])[1] == 3 / 8
        with pytest.raises(NoPositives):
            pr_auprc([0.1, 0.2], [0, 0])

    def test_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            n = int(rng.integers(1, 25))
            scores = rng.integers(0, 6, n) / 6.0
            labels = rng.integers(0, 2, n)
            labels[0] = 1
            assert abs(pr_auprc(scores, labels)[1] - auprc_ref(list(scores), list(labels))) <= 1e-12


class TestReport:
    def test_evaluate_patients(self):
        probs = {"A": [("AV", 0.9), ("PV", 0.7)], "B": [("AV", 0.2)], "C": [("MV", 0.6), ("TV", 0.1)]}
        labels = {"A": "CHD", "B": "NonCHD", "C": "NonCHD"}
        rep = evaluate_patients(probs, labels)
        assert [p.decision for p in rep.patients] == ["CHD", "NonCHD", "NonCHD"]
        assert rep.auroc == 1.0 and rep.accuracy == 1.0
        d = rep.to_dict()
        c = d["counts"]
        assert d["accuracy"] == (c["TP"] + c["TN"]) / sum(c.values())

    def test_mean_sd(self):
        assert mean_sd([90, 92, 94]) == (92.0, 2.0)
        assert mean_sd([0.5]) == (0.5, 0.0)
