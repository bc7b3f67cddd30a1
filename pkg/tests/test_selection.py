import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from chdscreen.exceptions import EmptySample, SingleClassOnly
from chdscreen.handcrafted import FEATURE_NAMES
from chdscreen.metrics import roc_auroc
from chdscreen.selection import FeatureTable, MannWhitneySelector, mann_whitney_u, select_features
from oracles import mw_exact_p_ref, u_pairs_ref


def tie_free_pair(rng, n_a, n_b):
    pooled = rng.permutation(rng.standard_normal(n_a + n_b))
    return pooled[:n_a], pooled[n_a:]


def pair_with_u(n_a, n_b, u):
    """Tie-free samples whose U for `a` equals `u`."""
    ranks = list(range(n_a))
    # move the top element of a upward one rank at a time
    a_ranks, extra = [], u
    for i in reversed(ranks):
        step = min(extra, n_b)
        a_ranks.append(i + step)
        extra -= step
    a = np.array(sorted(a_ranks), dtype=float)
    b = np.array(sorted(set(range(n_a + n_b)) - set(a_ranks)), dtype=float)
    return a, b


class TestMannWhitney:
    def test_separated_triplets(self):
        res = mann_whitney_u([1, 2, 3], [4, 5, 6])
        assert res.U == 0.0
        assert abs(res.p_value - 0.1) < 1e-12
        assert res.method == "exact"

    def test_identical_samples(self):
        a = [1.0, 2.0, 2.0, 5.0]
        res = mann_whitney_u(a, list(a))
        assert res.U == 8.0
        assert res.p_value == 1.0

    def test_exact_against_enumeration(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            a, b = tie_free_pair(rng, 6, 6)
            assert abs(mann_whitney_u(a, b).p_value - mw_exact_p_ref(a, b)) < 1e-9

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 6), min_size=1, max_size=25), st.lists(st.integers(0, 6), min_size=1, max_size=25))
    def test_u_complement_with_ties(self, a, b):
        ua = mann_whitney_u(a, b).U
        ub = mann_whitney_u(b, a).U
        assert ua + ub == len(a) * len(b)
        assert ua == u_pairs_ref(a, b)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.lists(st.floats(-10, 10), min_size=1, max_size=30))
    def test_u_matches_auroc(self, a, b):
        scores = np.array(a + b)
        labels = np.r_[np.ones(len(a)), np.zeros(len(b))]
        _, auroc = roc_auroc(scores, labels)
        assert abs(mann_whitney_u(a, b).U / (len(a) * len(b)) - auroc) <= 1e-12

    def test_disjoint_twenty_per_class(self):
        a, b = np.arange(20.0) + 100, np.arange(20.0)
        res = mann_whitney_u(a, b)
        assert res.U == 400.0 and res.method == "normal"
        z = (200 - 0.5) / math.sqrt(20 * 20 * 41 / 12)
        assert abs(res.p_value - math.erfc(z / math.sqrt(2))) < 1e-15
        assert res.p_value < 1e-6

    def test_empty(self):
        with pytest.raises(EmptySample):
            mann_whitney_u([], [1.0])

    def test_pair_with_u_helper(self):
        for u in range(50):
            a, b = pair_with_u(7, 7, u)
            assert u_pairs_ref(a, b) == u

    @pytest.mark.xfail(strict=True, reason="normal approximation differs from the exact p by up to 0.0124 at 7+7")
    def test_exact_vs_normal_within_001(self):
        for u in range(50):
            a, b = pair_with_u(7, 7, u)
            exact = mann_whitney_u(a, b).p_value
            approx = mann_whitney_u(a, b, exact_max_total=0).p_value
            assert abs(exact - approx) <= 0.01

    def test_exact_vs_normal_worst_case(self):
        # every tie-free 7+7 sample is covered because p depends on U alone
        gaps = []
        for u in range(50):
            a, b = pair_with_u(7, 7, u)
            gaps.append(abs(mann_whitney_u(a, b).p_value - mann_whitney_u(a, b, exact_max_total=0).p_value))
        assert max(gaps) <= 0.0125


class TestSelection:
    def make_table(self, rng, n=20):
        y = np.r_[np.ones(n), np.zeros(n)].astype(int)
        X = rng.standard_normal((2 * n, 11))
        X[:, 0] = np.where(y == 1, 100 + np.arange(2 * n), np.arange(2 * n))
        X[:, 1] = 3.0
        return FeatureTable(X, y)

    def test_disjoint_and_identical_features(self, rng):
        res = select_features(self.make_table(rng))
        assert res.tests[0].p < 1e-6 and res.tests[0].selected
        assert res.tests[1].p == 1.0 and not res.tests[1].selected
        assert res.selected[0] == FEATURE_NAMES[0]

    def test_selected_iff_below_alpha(self, rng):
        res = select_features(self.make_table(rng), alpha=0.3)
        assert all(t.selected == (t.p < 0.3) for t in res.tests)

    def test_alpha_zero(self, rng):
        assert select_features(self.make_table(rng), alpha=0.0).selected == []

    def test_single_class(self, rng):
        with pytest.raises(SingleClassOnly):
            select_features(FeatureTable(rng.standard_normal((5, 11)), np.ones(5, int)))

    def test_json_report(self, rng):
        doc = json.loads(select_features(self.make_table(rng)).to_json())
        assert len(doc) == 11
        assert set(doc[0]) == {"feature", "U", "p", "selected"}

    def test_sklearn_selector(self, rng):
        X = rng.standard_normal((40, 4))
        y = np.r_[np.ones(20), np.zeros(20)].astype(int)
        X[:, 2] += 5 * y
        sel = MannWhitneySelector(alpha=0.01).fit(X, y)
        assert sel.get_support().tolist() == [False, False, True, False]
        assert sel.transform(X).shape == (40, 1)
        assert clone(sel).get_params() == {"alpha": 0.01}
        assert sel.pvalues_.shape == (4,)
