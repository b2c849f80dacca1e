"""Paired comparison of per-subject F1 scores between sensor configurations."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DegenerateError, KeyMismatchError, ParamError

EXACT_MAX_N = 20
PAPER_PAIRS = (("WO", "WA"), ("WO", "W18"), ("WA", "W18"))


@dataclass(frozen=True)
class PairedScores:
    labels: tuple[str, str]
    keys: tuple
    diffs: np.ndarray


@dataclass(frozen=True)
class TestResult:
    statistic: float  # W = min(W+, W-)
    p_value: float
    method: str  # "exact" or "normal_approximation"
    n_effective: int
    w_plus: float
    w_minus: float


def midranks(values) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_counts(doubled_ranks) -> np.ndarray:
    """Number of sign assignments giving each doubled positive-rank sum.

    Tallies all 2^n assignments by building the subset-sum distribution
    one observation at a time; counts are exact integers.
    """
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    top = 0
    for r in doubled_ranks:
        r = int(r)
        counts[r:top + r + 1] = counts[r:top + r + 1] + counts[:top + 1]
        top += r
    return counts


def wilcoxon_signed_rank(diffs) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zero differences are discarded. For up to 20 remaining pairs the
    p-value is exact over all sign assignments; beyond that a normal
    approximation with tie-corrected variance and continuity correction
    is used. Raises :class:`DegenerateError` (``p_value`` 1.0) when every
    difference is zero.
    """
    d = np.asarray(diffs, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(d)):
        raise ParamError("differences must be finite")
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise DegenerateError("all paired differences are zero")
    ranks = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    total = n * (n + 1) / 2
    stat = min(w_plus, w_minus)

    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)  # mid-ranks are half-integers
        counts = _exact_counts(doubled)
        T2 = int(doubled.sum())
        obs = abs(2 * int(round(2 * w_plus)) - T2)
        sums = np.arange(T2 + 1)
        extreme = int(counts[np.abs(2 * sums - T2) >= obs].sum())
        p = extreme / 2 ** n
        method = "exact"
    else:
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24 - float((tie_counts ** 3 - tie_counts).sum()) / 48
        z = max(abs(w_plus - total / 2) - 0.5, 0.0) / math.sqrt(var) if var > 0 else 0.0
        p = math.erfc(z / math.sqrt(2))
        method = "normal_approximation"
    return TestResult(stat, min(1.0, float(p)), method, n, w_plus, w_minus)


def bonferroni(p_values, alpha: float = 0.05, m: int | None = None):
    """Return ``(decisions, threshold)``; a test is significant when ``p < alpha / m``.

    ``m`` defaults to the number of p-values (1 for an empty list).
    """
    if not 0 < alpha < 1:
        raise ParamError(f"alpha must lie in (0, 1), got {alpha}")
    p_values = list(p_values)
    if m is None:
        m = max(len(p_values), 1)
    if m < 1:
        raise ParamError("comparison count m must be >= 1")
    threshold = alpha / m
    return [p < threshold for p in p_values], threshold


def compare_configs(scores_a: Mapping, scores_b: Mapping, labels=("A", "B")) -> PairedScores:
    """Pair two ``{(subject, repeat): score}`` maps; diffs are ``b - a`` in sorted key order."""
    if set(scores_a) != set(scores_b):
        only_a = sorted(set(scores_a) - set(scores_b))
        only_b = sorted(set(scores_b) - set(scores_a))
        raise KeyMismatchError(f"unpaired keys: only in {labels[0]}: {only_a}; "
                               f"only in {labels[1]}: {only_b}")
    keys = tuple(sorted(scores_a))
    diffs = np.array([scores_b[k] - scores_a[k] for k in keys], dtype=np.float64)
    return PairedScores(tuple(labels), keys, diffs)


@dataclass(frozen=True)
class ComparisonRow:
    pair: str
    n_effective: int
    statistic: float
    p_value: float
    method: str
    threshold: float
    significant: bool


def compare_pairs(scores_by_config: Mapping[str, Mapping], pairs=None, alpha: float = 0.05):
    """Wilcoxon test for each configuration pair, Bonferroni-corrected over the pairs.

    Defaults to WO-WA, WO-W18, WA-W18 when those configurations are all
    present, else every pair in the given order.
    """
    configs = list(scores_by_config)
    if len(configs) < 2:
        raise ParamError("need scores for at least two configurations")
    if pairs is None:
        if all(c in scores_by_config for pair in PAPER_PAIRS for c in pair):
            pairs = PAPER_PAIRS
        else:
            pairs = [(a, b) for i, a in enumerate(configs) for b in configs[i + 1:]]
    tests = []
    for a, b in pairs:
        if a not in scores_by_config or b not in scores_by_config:
            raise KeyMismatchError(f"no scores for pair {a}-{b}")
        paired = compare_configs(scores_by_config[a], scores_by_config[b], (a, b))
        try:
            tests.append(wilcoxon_signed_rank(paired.diffs))
        except DegenerateError:
            tests.append(TestResult(0.0, DegenerateError.p_value, "degenerate", 0, 0.0, 0.0))
    decisions, threshold = bonferroni([t.p_value for t in tests], alpha, m=len(pairs))
    return [ComparisonRow(f"{a}-{b}", t.n_effective, t.statistic, t.p_value, t.method,
                          threshold, sig)
            for (a, b), t, sig in zip(pairs, tests, decisions)]


COMPARISON_HEADER = ["pair", "n_effective", "W", "p_value", "method", "threshold", "significant"]


def write_comparison_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_HEADER)
        for r in rows:
            w.writerow([r.pair, r.n_effective, repr(float(r.statistic)), repr(float(r.p_value)),
                        r.method, repr(float(r.threshold)), str(r.significant).lower()])
