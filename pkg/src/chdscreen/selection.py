"""Mann-Whitney U screening of candidate handcrafted features."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import List, NamedTuple, Sequence

import numpy as np
from scipy.stats import norm, rankdata
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import EmptySample, SingleClassOnly
from .handcrafted import FEATURE_NAMES
from .validation import check_binary_labels, check_feature_matrix

EXACT_MAX_TOTAL = 14


class MannWhitneyResult(NamedTuple):
    U: float
    p_value: float
    method: str


@lru_cache(maxsize=None)
def _exact_u_distribution(n_a: int, n_b: int) -> np.ndarray:
    """U of sample a for every equally likely assignment of ranks 1..N to a."""
    offset = n_a * (n_a + 1) // 2
    return np.array(
        [sum(c) - offset for c in itertools.combinations(range(1, n_a + n_b + 1), n_a)],
        dtype=np.float64,
    )


def mann_whitney_u(a, b, exact_max_total: int = EXACT_MAX_TOTAL) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test; U counts pairs with a > b, ties as 1/2.

    Small tie-free samples (n_a + n_b <= `exact_max_total`) get the exact
    p-value by enumerating every rank assignment. Otherwise the normal
    approximation with tie and continuity corrections is used.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples need at least one observation")
    n_a, n_b = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled)
    u = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2)
    mu = n_a * n_b / 2.0
    has_ties = np.unique(pooled).size < pooled.size

    if not has_ties and n_a + n_b <= exact_max_total:
        dist = _exact_u_distribution(n_a, n_b)
        extreme = np.abs(dist - mu) >= abs(u - mu) - 1e-9
        return MannWhitneyResult(u, min(1.0, float(extreme.mean())), "exact")

    n = n_a + n_b
    _, t = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(t**3 - t)) / (n * (n - 1)) if n > 1 else 0.0
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return MannWhitneyResult(u, 1.0, "normal")
    z = max(abs(u - mu) - 0.5, 0.0) / np.sqrt(var)
    return MannWhitneyResult(u, min(1.0, float(2 * norm.sf(z))), "normal")


@dataclass
class FeatureTable:
    values: np.ndarray
    labels: np.ndarray
    feature_names: Sequence[str] = FEATURE_NAMES

    def __post_init__(self):
        self.values = check_feature_matrix(self.values, n_features=len(self.feature_names))
        self.labels = check_binary_labels(self.labels, len(self.values))


@dataclass
class FeatureTest:
    feature: str
    U: float
    p: float
    selected: bool


@dataclass
class SelectionResult:
    tests: List[FeatureTest]
    alpha: float

    @property
    def selected(self) -> List[str]:
        return [t.feature for t in self.tests if t.selected]

    def to_json(self) -> str:
        return json.dumps(
            [{"feature": t.feature, "U": t.U, "p": t.p, "selected": t.selected} for t in self.tests],
            indent=2,
        )


def select_features(table: FeatureTable, alpha: float = 0.05) -> SelectionResult:
    """Test every feature for a CHD vs NonCHD difference; keep those with p < alpha.

    U is reported for the CHD group.
    """
    pos = table.labels == 1
    if pos.all() or not pos.any():
        raise SingleClassOnly("feature selection needs both CHD and NonCHD samples")
    tests = []
    for j, name in enumerate(table.feature_names):
        res = mann_whitney_u(table.values[pos, j], table.values[~pos, j])
        tests.append(FeatureTest(name, res.U, res.p_value, res.p_value < alpha))
    return SelectionResult(tests, alpha)


class MannWhitneySelector(SelectorMixin, BaseEstimator):
    """Keep columns whose class distributions differ at level `alpha`.

    Attributes set by ``fit``: ``statistics_`` (U of the positive class)
    and ``pvalues_``.
    """

    def __init__(self, alpha: float = 0.05):
        self.alpha = alpha

    def fit(self, X, y):
        X = check_feature_matrix(X)
        y = check_binary_labels(y, len(X))
        names = [f"x{j}" for j in range(X.shape[1])]
        result = select_features(FeatureTable(X, y, names), self.alpha)
        self.statistics_ = np.array([t.U for t in result.tests])
        self.pvalues_ = np.array([t.p for t in result.tests])
        self.n_features_in_ = X.shape[1]
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "pvalues_")
        return self.pvalues_ < self.alpha
