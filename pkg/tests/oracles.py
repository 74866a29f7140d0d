"""Slow reference implementations used to check the fast code paths.

Nothing here imports the package's numeric routines; every quantity is
recomputed from its textbook definition.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from math import isqrt

import numpy as np

TIE = 1e-11


def tail_count_exact_p01(n: int) -> int:
    """floor(n/100 + 2*sqrt(99 n)/100 + 1) in exact integer arithmetic."""
    # n*0.01 + 2*sqrt(n*0.0099) + 1 = (n + sqrt(396 n) + 100) / 100
    return (n + 100 + isqrt(396 * n)) // 100


def trimmed_naive(xs, n_tail):
    """Sort, slice and recompute in exact rational arithmetic."""
    v = sorted(Fraction(float(a)) for a in xs)
    n = len(v)
    mid = v[n_tail:n - n_tail]
    m = sum(mid) / len(mid)
    if len(mid) < 2:
        return float(m), 0.0
    var = sum((a - m) ** 2 for a in mid) / (len(mid) - 1)
    return float(m), math.sqrt(var) * (n + n_tail) / (n - n_tail)


def _sd(v: np.ndarray) -> float:
    if len(v) < 2:
        return 0.0
    m = math.fsum(v) / len(v)
    return math.sqrt(math.fsum((v - m) ** 2) / len(v))


def pooled_gain(y, groups) -> float:
    y = np.asarray(y, dtype=float)
    s = _sd(y)
    return (s - sum(len(g) * _sd(y[g]) for g in groups if len(g)) / len(y)) / s


def _info(counts) -> float:
    n = sum(counts)
    return n * math.log(n) - sum(c * math.log(c) for c in counts if c > 0) if n else 0.0


def info_gain(y, groups, m) -> float:
    y = np.asarray(y)
    def cnt(v):
        return [int(np.sum(v == k)) for k in range(m)]
    base = _info(cnt(y))
    return (base - sum(_info(cnt(y[g])) for g in groups if len(g))) / base


def _choose(cands):
    """cands: (gain, n_l, n_r, order_key, partition); pick by gain, balance, order."""
    best = max(c[0] for c in cands)
    tied = [c for c in cands if c[0] >= best - TIE]
    tied.sort(key=lambda c: (-min(c[1], c[2]), c[3]))
    return tied[0]


def threshold_candidates(x, min_size):
    x = np.asarray(x, dtype=float)
    miss = np.flatnonzero(np.isnan(x))
    vals = sorted(set(x[~np.isnan(x)].tolist()))
    out = []
    for a, b in zip(vals, vals[1:]):
        t = (a + b) / 2
        left = np.flatnonzero(x <= t)
        right = np.flatnonzero(x > t)
        if len(left) >= min_size and len(right) >= min_size:
            out.append((t, left, right, miss))
    return out


def best_threshold(x, score, min_size):
    """Exhaustive threshold search; ``score(groups)`` is maximized."""
    cands = [(score([l, r, u]), len(l), len(r), t, (l, r, u))
             for t, l, r, u in threshold_candidates(x, min_size)]
    return _choose(cands) if cands else None


def best_prefix_subset(x, y_for_order, score, min_size):
    """Exhaustive search over cuts of categories sorted by mean of ``y_for_order``."""
    x = np.asarray(x)
    y_for_order = np.asarray(y_for_order, dtype=float)
    present = sorted(set(x[x >= 0].tolist()))
    means = {c: math.fsum(y_for_order[x == c]) / np.sum(x == c) for c in present}
    order = sorted(present, key=lambda c: (means[c], c))
    miss = np.flatnonzero(x < 0)
    cands = []
    for j in range(1, len(order)):
        left = np.flatnonzero(np.isin(x, order[:j]))
        right = np.flatnonzero(np.isin(x, order[j:]))
        if len(left) >= min_size and len(right) >= min_size:
            cands.append((score([left, right, miss]), len(left), len(right), j, (left, right, miss)))
    return _choose(cands) if cands else None


def best_any_subset(x, score, min_size):
    """Full enumeration of two-way groupings of the present categories."""
    x = np.asarray(x)
    present = sorted(set(x[x >= 0].tolist()))
    miss = np.flatnonzero(x < 0)
    best = None
    first, rest = present[0], present[1:]
    for k in range(len(rest) + 1):
        for combo in itertools.combinations(rest, k):
            left_set = [first, *combo]
            if len(left_set) == len(present):
                continue
            left = np.flatnonzero(np.isin(x, left_set))
            right = np.flatnonzero((x >= 0) & ~np.isin(x, left_set))
            if len(left) < min_size or len(right) < min_size:
                continue
            g = score([left, right, miss])
            if best is None or g > best[0]:
                best = (g, left, right)
    return best
