#!/usr/bin/env python3
"""
Maximal and total information coefficients, computed from scratch.

The characteristic matrix is approximated the usual way: one axis is
equipartitioned by rank, the other axis is optimized by dynamic programming
over clump boundaries (merged into at most c * columns superclumps), and both
orientations are tried. mic_exhaustive brute-forces every grid on tiny inputs
and serves as the oracle for the heuristic.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from errors import InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.6
DEFAULT_CLUMPS = 15
MIN_SAMPLES = 8
EXHAUSTIVE_MAX_N = 30
EXHAUSTIVE_MAX_B = 9


@dataclass
class GridPartition:
    """Cut positions on each axis; cells = (len(x_cuts)+1) * (len(y_cuts)+1)"""

    x_cuts: List[float] = field(default_factory=list)
    y_cuts: List[float] = field(default_factory=list)

    @property
    def shape(self):
        return len(self.x_cuts) + 1, len(self.y_cuts) + 1


@dataclass
class CharacteristicMatrix:
    entries: Dict[Tuple[int, int], float]
    n: int
    B: int

    def mic(self):
        return max(self.entries.values(), default=0.0)

    def tic(self):
        if not self.entries:
            return 0.0
        # sorted summation keeps tic(x, y) == tic(y, x) bit for bit
        values = np.sort(np.fromiter(self.entries.values(), dtype=float))
        return float(values.sum() / values.size)


def _check_pair(x, y):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise InvalidInputError(f"x and y differ in length: {x.size} vs {y.size}")
    if x.size < MIN_SAMPLES:
        raise InvalidInputError(f"MIC needs at least {MIN_SAMPLES} samples, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("MIC inputs must be finite")
    return x, y


def grid_budget(n, alpha=DEFAULT_ALPHA):
    return max(4, int(math.ceil(n ** alpha)))


def _tie_groups(v):
    """Stable sort order and, per sorted position, the start of its tie group"""
    order = np.argsort(v, kind="stable")
    sv = v[order]
    new_group = np.empty(sv.size, dtype=bool)
    new_group[0] = True
    new_group[1:] = sv[1:] != sv[:-1]
    starts = np.maximum.accumulate(np.where(new_group, np.arange(sv.size), 0))
    return order, starts, new_group


def equipartition(v, bins):
    """Rank-based bin labels; tied values always share a bin"""
    v = np.asarray(v, dtype=float)
    n = v.size
    order, starts, _ = _tie_groups(v)
    labels_sorted = (starts * bins) // n
    labels = np.empty(n, dtype=int)
    labels[order] = labels_sorted
    # compact to 0..q-1 so empty bins do not show up as rows
    _, compact = np.unique(labels, return_inverse=True)
    return compact


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())


def _column_scores(cum, n):
    """F[s, t] = sum_r (c_r / n) log2(c_r / c) for the column spanning (s, t]"""
    diff = cum[None, :, :] - cum[:, None, :]
    totals = diff.sum(axis=2, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(diff > 0, (diff / n) * np.log2(diff / totals), 0.0)
    F = terms.sum(axis=2)
    K = cum.shape[0]
    F[np.tril_indices(K)] = -np.inf
    return F


def _candidate_boundaries(v, labels, max_cols, clumps_factor):
    """Clump ends (in sorted order), reduced to superclumps when too many"""
    n = v.size
    order, _, new_group = _tie_groups(v)
    sorted_labels = labels[order]
    group_id = np.cumsum(new_group) - 1
    n_groups = group_id[-1] + 1
    group_end = np.nonzero(np.append(new_group[1:], True))[0] + 1

    lo = np.full(n_groups, np.iinfo(int).max)
    hi = np.full(n_groups, -1)
    np.minimum.at(lo, group_id, sorted_labels)
    np.maximum.at(hi, group_id, sorted_labels)
    pure = np.where(lo == hi, lo, -1)

    keep = np.ones(n_groups, dtype=bool)
    keep[:-1] = ~((pure[:-1] == pure[1:]) & (pure[:-1] >= 0))
    ends = group_end[keep]

    limit = clumps_factor * max_cols
    if ends.size > limit:
        targets = n * np.arange(1, limit) / limit
        picks = np.searchsorted(ends, targets, side="left")
        picks = np.clip(picks, 0, ends.size - 1)
        ends = np.unique(np.append(ends[picks], n))
    return order, sorted_labels, ends


def optimize_axis(v, labels, max_cols, clumps_factor=DEFAULT_CLUMPS):
    """Best mutual information with at most l columns on v, for l = 0..max_cols"""
    n = v.size
    q = int(labels.max()) + 1
    best_by_cols = np.zeros(max_cols + 1)
    if q < 2 or max_cols < 2:
        return best_by_cols

    order, sorted_labels, ends = _candidate_boundaries(v, labels, max_cols, clumps_factor)
    onehot = np.zeros((n, q))
    onehot[np.arange(n), sorted_labels] = 1.0
    running = np.vstack([np.zeros((1, q)), np.cumsum(onehot, axis=0)])
    cum = running[np.concatenate([[0], ends])]
    K = ends.size

    h_rows = _entropy(cum[-1], n)
    F = _column_scores(cum, n)

    current = F[0].copy()
    for l in range(2, max_cols + 1):
        if l > K:
            best_by_cols[l] = best_by_cols[l - 1]
            continue
        current = np.max(current[:, None] + F, axis=0)
        value = h_rows + current[K]
        best_by_cols[l] = max(best_by_cols[l - 1], value)
    return best_by_cols


def characteristic_matrix(x, y, B=None, alpha=DEFAULT_ALPHA, c=DEFAULT_CLUMPS) -> CharacteristicMatrix:
    x, y = _check_pair(x, y)
    n = x.size
    if B is None:
        B = grid_budget(n, alpha)
    entries: Dict[Tuple[int, int], float] = {}

    def record(a, b, info):
        value = min(1.0, max(0.0, info / math.log2(min(a, b))))
        if value > entries.get((a, b), -1.0):
            entries[(a, b)] = value

    for rows in range(2, B // 2 + 1):
        max_cols = B // rows
        best = optimize_axis(x, equipartition(y, rows), max_cols, c)
        for cols in range(2, max_cols + 1):
            record(cols, rows, best[cols])

    for cols in range(2, B // 2 + 1):
        max_rows = B // cols
        best = optimize_axis(y, equipartition(x, cols), max_rows, c)
        for rows in range(2, max_rows + 1):
            record(cols, rows, best[rows])

    return CharacteristicMatrix(entries, n, B)


def mic(x, y, alpha=DEFAULT_ALPHA, c=DEFAULT_CLUMPS, B=None) -> float:
    return characteristic_matrix(x, y, B, alpha, c).mic()


def tic(x, y, alpha=DEFAULT_ALPHA, c=DEFAULT_CLUMPS, B=None) -> float:
    return characteristic_matrix(x, y, B, alpha, c).tic()


def mic_tic(x, y, alpha=DEFAULT_ALPHA, c=DEFAULT_CLUMPS, B=None) -> Tuple[float, float]:
    """Both statistics from one characteristic matrix"""
    matrix = characteristic_matrix(x, y, B, alpha, c)
    return matrix.mic(), matrix.tic()


def _grid_information(counts, n):
    """Plug-in mutual information (bits) of a batch of contingency tables (..., a, b)"""
    p = counts / n
    pa = p.sum(axis=-1, keepdims=True)
    pb = p.sum(axis=-2, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p / (pa * pb)), 0.0)
    return terms.sum(axis=(-2, -1))


def _cut_candidates(v):
    order, _, new_group = _tie_groups(v)
    sv = v[order]
    positions = np.nonzero(new_group[1:])[0] + 1
    midpoints = 0.5 * (sv[positions - 1] + sv[positions])
    return order, positions, midpoints


def exhaustive_best_grid(x, y, B):
    """True maximum of normalized mutual information over every grid with <= B cells"""
    x, y = _check_pair(x, y)
    n = x.size
    if n > EXHAUSTIVE_MAX_N or B > EXHAUSTIVE_MAX_B:
        raise InvalidInputError(
            f"Exhaustive search limited to n <= {EXHAUSTIVE_MAX_N} and B <= {EXHAUSTIVE_MAX_B}, got n={n}, B={B}")

    x_order, x_pos, x_mid = _cut_candidates(x)
    _, y_pos, y_mid = _cut_candidates(y)
    y_sorted_rank = np.empty(n, dtype=int)
    y_sorted_rank[np.argsort(y, kind="stable")] = np.arange(n)
    y_rank_in_x_order = y_sorted_rank[x_order]

    best_score, best_grid = 0.0, GridPartition()
    for rows in range(2, B // 2 + 1):
        for y_cut_idx in itertools.combinations(range(y_pos.size), rows - 1):
            row_of_rank = np.searchsorted(y_pos[list(y_cut_idx)], np.arange(n), side="right")
            row_labels = row_of_rank[y_rank_in_x_order]
            onehot = np.zeros((n, rows))
            onehot[np.arange(n), row_labels] = 1.0
            cum = np.vstack([np.zeros((1, rows)), np.cumsum(onehot, axis=0)])

            for cols in range(2, B // rows + 1):
                combos = np.array(list(itertools.combinations(range(x_pos.size), cols - 1)), dtype=int)
                if combos.size == 0:
                    continue
                bounds = np.hstack([np.zeros((len(combos), 1), dtype=int), x_pos[combos],
                                    np.full((len(combos), 1), n)])
                counts = cum[bounds[:, 1:]] - cum[bounds[:, :-1]]
                scores = _grid_information(counts, n) / math.log2(min(cols, rows))
                top = int(np.argmax(scores))
                if scores[top] > best_score:
                    best_score = float(scores[top])
                    best_grid = GridPartition(x_mid[combos[top]].tolist(), y_mid[list(y_cut_idx)].tolist())
    return min(1.0, best_score), best_grid


def mic_exhaustive(x, y, B) -> float:
    return exhaustive_best_grid(x, y, B)[0]
