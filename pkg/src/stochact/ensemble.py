"""Sum-rule fusion, cross-validation splits, ranking and the Wilcoxon signed-rank test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import make_rng
from .errors import ConfigurationError, ContractError, InsufficientDataError

EXACT_MAX_N = 12
MIN_PAIRS = 5


def sum_rule_fuse(member_probs) -> tuple[np.ndarray, np.ndarray]:
    """Average member probability vectors and take the argmax.

    Accepts a list of ``(C,)`` vectors or ``(N, C)`` matrices (one per member).
    Returns ``(fused, decision)``.
    """
    members = [np.asarray(p, dtype=np.float64) for p in member_probs]
    if not members:
        raise ContractError("sum rule needs at least one member")
    shape = members[0].shape
    if any(m.shape != shape for m in members):
        raise ContractError(f"member outputs disagree in shape: {[m.shape for m in members]}")
    fused = np.sum(members, axis=0) / len(members)
    return fused, np.argmax(fused, axis=-1)


def accuracy(decisions, labels) -> float:
    decisions = np.asarray(decisions)
    labels = np.asarray(labels)
    if decisions.shape != labels.shape:
        raise ContractError(f"{decisions.shape} decisions vs {labels.shape} labels")
    if decisions.size == 0:
        raise ContractError("accuracy of an empty set")
    return float(np.mean(decisions == labels))


# -- splits -------------------------------------------------------------------


@dataclass
class FoldSplit:
    """Per-sample test-fold index; ``k`` folds, each used once as the test set."""
    fold_of: np.ndarray
    k: int
    protocol: str = "kcv"

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        if self.protocol == "tr-te":
            return np.flatnonzero(self.fold_of == -1)
        return np.flatnonzero((self.fold_of != fold) & (self.fold_of >= 0))

    @property
    def n_folds(self) -> int:
        return 1 if self.protocol == "tr-te" else self.k


def kfold_split(labels, k: int, seed: int) -> FoldSplit:
    """Stratified k-fold: each class is shuffled and dealt round-robin into folds."""
    labels = np.asarray(labels)
    if k < 2:
        raise ConfigurationError(f"k must be >= 2, got {k}")
    classes, counts = np.unique(labels, return_counts=True)
    if np.any(counts < k):
        small = classes[counts < k].tolist()
        raise ConfigurationError(f"classes {small} have fewer than k={k} samples")
    rng = make_rng(seed)
    fold_of = np.empty(len(labels), dtype=np.int64)
    start = 0
    for c in classes:
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        # continue the round-robin where the previous class stopped so fold sizes stay within 1
        fold_of[idx] = (np.arange(len(idx)) + start) % k
        start = (start + len(idx)) % k
    return FoldSplit(fold_of, k)


def train_test_split(n_train: int, n_test: int) -> FoldSplit:
    """Fixed protocol: the first ``n_train`` samples train, the rest test (fold 0)."""
    fold_of = np.concatenate([np.full(n_train, -1), np.zeros(n_test, dtype=np.int64)])
    return FoldSplit(fold_of.astype(np.int64), 1, "tr-te")


def stratified_holdout(labels, test_fraction: float, seed: int) -> FoldSplit:
    labels = np.asarray(labels)
    rng = make_rng(seed)
    fold_of = np.full(len(labels), -1, dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        fold_of[idx[: int(round(test_fraction * len(idx)))]] = 0
    return FoldSplit(fold_of, 1, "tr-te")


# -- ranking ------------------------------------------------------------------


def rank_by_average(averages) -> list[int]:
    """Rank 1 = highest average; exact ties share the smaller rank (1, 2, 2, 4)."""
    avgs = [float(a) for a in averages]
    return [1 + sum(other > a for other in avgs) for a in avgs]


# -- Wilcoxon signed-rank -----------------------------------------------------


@dataclass
class WilcoxonResult:
    statistic: float  # W+ : sum of ranks of positive differences (a - b)
    p_value: float  # two-sided
    p_greater: float  # one-sided, alternative a > b
    p_less: float  # one-sided, alternative a < b
    n: int
    method: str


def _signed_rank_inputs(a, b):
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if d.ndim != 1:
        raise ContractError("paired samples must be one-dimensional")
    d = d[d != 0]
    if len(d) < MIN_PAIRS:
        raise InsufficientDataError(f"{len(d)} non-zero differences; need at least {MIN_PAIRS}")
    absd = np.abs(d)
    # doubled mid-ranks are integers, which keeps the exact enumeration in integer arithmetic
    order = np.argsort(absd, kind="mergesort")
    ranks2 = np.empty(len(d), dtype=np.int64)
    i = 0
    sorted_abs = absd[order]
    tie_sizes = []
    while i < len(d):
        j = i
        while j + 1 < len(d) and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks2[order[i:j + 1]] = (i + 1) + (j + 1)
        tie_sizes.append(j - i + 1)
        i = j + 1
    return d, ranks2, tie_sizes


def _enumerate_statistic(ranks2: np.ndarray) -> np.ndarray:
    """Doubled W+ under every one of the 2^n sign patterns."""
    n = len(ranks2)
    patterns = (np.arange(2 ** n, dtype=np.int64)[:, None] >> np.arange(n)) & 1
    return patterns @ ranks2


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Paired signed-rank test of ``a`` against ``b``.

    Zero differences are dropped and tied magnitudes get mid-ranks. For
    ``n <= 12`` the null distribution is exact; above that a normal
    approximation with continuity and tie corrections is used.
    """
    d, ranks2, ties = _signed_rank_inputs(a, b)
    n = len(d)
    w2 = int(ranks2[d > 0].sum())
    if n <= EXACT_MAX_N:
        null = _enumerate_statistic(ranks2)
        total = 2 ** n
        ge = int(np.count_nonzero(null >= w2))
        le = int(np.count_nonzero(null <= w2))
        p_greater, p_less = ge / total, le / total
        p_two = min(1.0, 2.0 * min(ge, le) / total)
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - sum(t ** 3 - t for t in ties) / 48.0
        sd = math.sqrt(var)
        w = w2 / 2.0
        z_hi = (w - mean - 0.5) / sd
        z_lo = (w - mean + 0.5) / sd
        p_greater = 0.5 * math.erfc(z_hi / math.sqrt(2))
        p_less = 0.5 * math.erfc(-z_lo / math.sqrt(2))
        z = max(abs(w - mean) - 0.5, 0.0) / sd
        p_two = min(1.0, math.erfc(z / math.sqrt(2)))
        method = "normal"
    return WilcoxonResult(w2 / 2.0, p_two, p_greater, p_less, n, method)


# -- report -------------------------------------------------------------------


@dataclass
class ExperimentReport:
    """Methods x datasets accuracy (percent), averages, ranks and pairwise p-values."""
    methods: list[str]
    datasets: list[str]
    accuracy: np.ndarray  # (methods, datasets), percent
    fold_accuracy: dict = field(default_factory=dict)  # (method, dataset) -> list of fold accuracies

    @property
    def averages(self) -> np.ndarray:
        return self.accuracy.mean(axis=1)

    @property
    def ranks(self) -> list[int]:
        return rank_by_average(self.averages)

    def pvalues(self, sided: str = "two-sided") -> np.ndarray:
        """Pairwise p-values over datasets; NaN where the test has too few pairs."""
        m = len(self.methods)
        out = np.full((m, m), np.nan)
        for i in range(m):
            for j in range(m):
                if i == j:
                    continue
                try:
                    r = wilcoxon_signed_rank(self.accuracy[i], self.accuracy[j])
                except InsufficientDataError:
                    continue
                out[i, j] = r.p_value if sided == "two-sided" else r.p_greater
        return out
