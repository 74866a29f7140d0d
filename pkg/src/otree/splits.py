"""Gain-maximizing split search.

Numeric targets are split to maximize the reduction in size-weighted
standard deviation; categorical targets are binarized per category and
split to maximize information gain, with the reported gain recomputed on
the original multiclass target. Rows with a missing predictor always form
their own branch. Gains are normalized by the parent's dispersion.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from otree.tabular import MISSING, Column, ColumnKind

# exact-arithmetic ties show up as gains equal to within rounding noise
TIE_TOL = 1e-11

_OPS = ("le", "gt", "in", "not_in", "missing", "not_missing")


@dataclass(frozen=True)
class Condition:
    """One branch predicate on a named column.

    ``threshold`` applies to ``le``/``gt`` (level ranks for ordinal columns);
    ``levels`` holds level codes for ``in``/``not_in``. ``text`` is the
    human-readable rendering.
    """

    column: str
    op: str
    threshold: float | None = None
    levels: tuple[int, ...] = ()
    text: str = ""

    def __post_init__(self) -> None:
        if self.op not in _OPS:
            raise ValueError(f"unknown condition op {self.op!r}")
        if self.op in ("le", "gt") and (self.threshold is None or not math.isfinite(self.threshold)):
            raise ValueError("threshold conditions need a finite threshold")

    @property
    def involves_missing(self) -> bool:
        return self.op in ("missing", "not_missing")

    @property
    def key(self) -> tuple:
        return (self.column, self.op, self.threshold, self.levels)

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        """Boolean mask of rows satisfying the predicate.

        Coded columns use negative codes for missing (-1) and unseen (< -1)
        levels; unseen levels satisfy no predicate except ``not_missing``.
        """
        v = np.asarray(values)
        if v.dtype.kind == "f":
            missing = np.isnan(v)
            valid = ~missing
        else:
            missing = v == MISSING
            valid = v >= 0
        op = self.op
        if op == "missing":
            return missing
        if op == "not_missing":
            return ~missing
        if op in ("le", "gt"):
            with np.errstate(invalid="ignore"):
                hit = v <= self.threshold if op == "le" else v > self.threshold
            return valid & hit
        inside = np.isin(v, np.asarray(self.levels, dtype=v.dtype)) & valid
        return inside if op == "in" else valid & ~inside

    def to_dict(self) -> dict:
        d: dict = {"column": self.column, "op": self.op}
        if self.threshold is not None:
            d["threshold"] = self.threshold
        if self.levels:
            d["levels"] = list(self.levels)
        d["text"] = self.text
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Condition:
        thr = d.get("threshold")
        return cls(str(d["column"]), str(d["op"]), None if thr is None else float(thr),
                   tuple(int(c) for c in d.get("levels", ())), str(d.get("text", "")))


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def threshold_conditions(column: Column | None, name: str, thr: float) -> tuple[Condition, Condition]:
    """``<=``/``>`` pair with texts; ordinal ends collapse to ``=``."""
    if column is None or column.kind is ColumnKind.NUMERIC:
        return (Condition(name, "le", thr, text=f"[{name}] <= [{_fmt(thr)}]"),
                Condition(name, "gt", thr, text=f"[{name}] > [{_fmt(thr)}]"))
    levels = column.levels
    k = int(math.floor(thr))
    lo_text = (f"[{name}] = [{levels[0]}]" if k == 0 else f"[{name}] <= [{levels[k]}]")
    hi_text = (f"[{name}] = [{levels[-1]}]" if k + 1 == len(levels) - 1
               else f"[{name}] > [{levels[k]}]")
    return (Condition(name, "le", thr, text=lo_text), Condition(name, "gt", thr, text=hi_text))


def subset_condition(column: Column | None, name: str, codes: Sequence[int]) -> Condition:
    codes = tuple(sorted(int(c) for c in codes))
    names = [column.levels[c] if column is not None else str(c) for c in codes]
    if len(codes) == 1:
        text = f"[{name}] = [{names[0]}]"
    else:
        text = f"[{name}] in [{', '.join(names)}]"
    return Condition(name, "in", levels=codes, text=text)


def missing_conditions(name: str) -> tuple[Condition, Condition]:
    return (Condition(name, "not_missing", text=f"[{name}] is not missing"),
            Condition(name, "missing", text=f"[{name}] is missing"))


@dataclass(frozen=True)
class SplitResult:
    """Best partition found for one predictor.

    Branch order is (left, right, missing); ``missing`` is None when the
    predictor had no missing values at the node. ``category`` is the
    binarizing level for categorical targets.
    """

    column: str
    left: Condition
    right: Condition
    missing: Condition | None
    gain: float
    n_l: int
    n_r: int
    n_u: int
    category: int | None = None
    missing_only: bool = False

    @property
    def branches(self) -> list[Condition]:
        out = [self.left, self.right]
        if self.missing is not None:
            out.append(self.missing)
        return out


# -- dispersion and information helpers --------------------------------------


def compensated_cumsum(v: np.ndarray) -> np.ndarray:
    """Prefix sums with each addition's rounding error recovered and re-added."""
    v = np.asarray(v, dtype=np.float64)
    s = np.cumsum(v)
    prev = np.empty_like(s)
    prev[0] = 0.0
    prev[1:] = s[:-1]
    bb = s - prev
    err = (prev - (s - bb)) + (v - bb)
    return s + np.cumsum(err)


def running_moments(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Means and sums of squared deviations of every prefix of ``v``.

    Uses Welford's increments ``(x_k - m_{k-1}) (x_k - m_k)``, which are never
    negative, on prefix means taken from compensated sums.
    """
    v = np.asarray(v, dtype=np.float64)
    k = np.arange(1, len(v) + 1, dtype=np.float64)
    means = compensated_cumsum(v) / k
    prev = np.empty_like(means)
    prev[0] = v[0]
    prev[1:] = means[:-1]
    inc = (v - prev) * (v - means)
    inc[0] = 0.0
    return means, compensated_cumsum(np.maximum(inc, 0.0))


def pop_sd(y: np.ndarray) -> float:
    """Population sd (ddof=0).

    Split gains use the population form so that pooled child dispersion can
    never exceed the parent's; with ddof=1 small children get inflated and
    gains can turn negative.
    """
    if len(y) < 2 or y.min() == y.max():
        return 0.0
    return float(np.std(y))


def info_value(counts) -> float:
    """``n log n - sum n_k log n_k`` in nats."""
    c = np.asarray(counts, dtype=np.float64)
    c = c[c > 0]
    n = c.sum()
    if n <= 0:
        return 0.0
    return float(n * math.log(n) - np.sum(c * np.log(c)))


def _info_vec(counts: np.ndarray) -> np.ndarray:
    """Row-wise info value for a 2-D array of class counts."""
    c = np.asarray(counts, dtype=np.float64)
    n = c.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(c > 0, c * np.log(np.where(c > 0, c, 1.0)), 0.0)
        nl = np.where(n > 0, n * np.log(np.where(n > 0, n, 1.0)), 0.0)
    return nl - t.sum(axis=1)


def sd_partition_gain(y: np.ndarray, groups: Sequence[np.ndarray]) -> float:
    """Normalized pooled-sd reduction of ``y`` over a partition (index arrays).

    Group members are summed in index order, so any listing of the same
    partition gives the same bits.
    """
    y = np.asarray(y, dtype=np.float64)
    sigma = pop_sd(y)
    if sigma == 0.0:
        return float("nan")
    pooled = sum(len(g) * pop_sd(y[np.sort(g)]) for g in groups if len(g)) / len(y)
    return (sigma - pooled) / sigma


def info_partition_gain(y: np.ndarray, groups: Sequence[np.ndarray], n_classes: int | None = None) -> float:
    """Normalized information gain of class codes ``y`` over a partition."""
    y = np.asarray(y)
    m = int(y.max()) + 1 if n_classes is None else n_classes
    base = info_value(np.bincount(y, minlength=m))
    if base == 0.0:
        return float("nan")
    parts = sum(info_value(np.bincount(y[g], minlength=m)) for g in groups if len(g))
    return (base - parts) / base


def binarize_target(y: np.ndarray, c: int, ordinal: bool = False) -> np.ndarray:
    """Indicator of ``y == c`` or, for ordinal targets, of ``y <= c``."""
    y = np.asarray(y)
    return ((y <= c) if ordinal else (y == c)).astype(np.int8)


def _pick(gains: np.ndarray, n_left: np.ndarray, n_right: np.ndarray) -> int:
    """Best candidate; ties go to the more balanced split, then the first one."""
    best = gains.max()
    tied = np.flatnonzero(gains >= best - TIE_TOL)
    if len(tied) == 1:
        return int(tied[0])
    bal = np.minimum(n_left[tied], n_right[tied])
    return int(tied[np.flatnonzero(bal == bal.max())[0]])


# -- ordered predictors -----------------------------------------------------


def _ordered_prepare(x: np.ndarray, order: np.ndarray | None):
    x = np.asarray(x, dtype=np.float64)
    nm = ~np.isnan(x)
    if order is None:
        order = np.argsort(x, kind="stable")
    order = order[: int(nm.sum())]
    xs = x[order]
    cuts = np.flatnonzero(xs[1:] > xs[:-1]) + 1  # left size at each distinct boundary
    return xs, order, np.flatnonzero(~nm), cuts


def _threshold(xs: np.ndarray, k: int) -> float:
    a, b = xs[k - 1], xs[k]
    t = a + (b - a) / 2.0
    return float(t) if a <= t < b else float(a)


def _sd_scan(ys: np.ndarray, yu: np.ndarray, cuts: np.ndarray, n: int, sigma: float,
             center: float) -> np.ndarray:
    """Normalized pooled-sd gain for each candidate left size in ``cuts``."""
    d = ys - center
    nn = len(d)
    _, m2l = running_moments(d)
    _, m2r = running_moments(d[::-1])
    m2r = m2r[::-1]
    kl = cuts.astype(np.float64)
    kr = nn - kl
    var_l = m2l[cuts - 1] / kl
    var_r = m2r[cuts] / kr
    pooled = kl * np.sqrt(var_l) + kr * np.sqrt(var_r) + len(yu) * pop_sd(yu)
    return (sigma - pooled / n) / sigma


def best_numeric_split(
    x: np.ndarray,
    y: np.ndarray,
    min_size: int = 1,
    *,
    name: str = "x",
    column: Column | None = None,
    order: np.ndarray | None = None,
) -> SplitResult | None:
    """Threshold on an ordered predictor maximizing pooled-sd reduction of y.

    ``x`` is numeric with NaN for missing (ordinal ranks as floats). Returns
    None when y has zero spread or no threshold leaves both sides with at
    least ``min_size`` rows.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    sigma = pop_sd(y)
    if sigma == 0.0:
        return None
    xs, order, miss, cuts = _ordered_prepare(x, order)
    nn = len(xs)
    cuts = cuts[(cuts >= min_size) & (nn - cuts >= min_size)]
    if len(cuts) == 0:
        return None
    ys = y[order]
    gains = _sd_scan(ys, y[miss], cuts, n, sigma, float(np.mean(y)))
    k = int(cuts[_pick(gains, cuts, nn - cuts)])
    thr = _threshold(xs, k)
    groups = [order[:k], order[k:], miss]
    return _make_threshold_result(name, column, thr, groups,
                                  sd_partition_gain(y, groups))


def _make_threshold_result(name, column, thr, groups, gain, category=None) -> SplitResult:
    lc, rc = threshold_conditions(column, name, thr)
    mc = missing_conditions(name)[1] if len(groups[2]) else None
    return SplitResult(name, lc, rc, mc, float(gain), len(groups[0]), len(groups[1]),
                       len(groups[2]), category)


def _info_scan(bs: np.ndarray, bu: np.ndarray, cuts: np.ndarray) -> np.ndarray:
    """Information gain on a binary target for each candidate left size."""
    ones = np.concatenate([[0], np.cumsum(bs, dtype=np.int64)])
    nn = len(bs)
    l1 = ones[cuts]
    l0 = cuts - l1
    r1 = ones[nn] - l1
    r0 = (nn - cuts) - r1
    u1 = int(bu.sum())
    u0 = len(bu) - u1
    n1 = int(ones[nn]) + u1
    n0 = nn + len(bu) - n1
    base = info_value([n0, n1])
    parts = (_info_vec(np.stack([l0, l1], axis=1)) + _info_vec(np.stack([r0, r1], axis=1))
             + info_value([u0, u1]))
    return (base - parts) / base


def _binarized_ordered(x, y_tilde, y_orig, min_size, name, column, order, n_classes):
    b = np.asarray(y_tilde, dtype=np.int64)
    n1 = int(b.sum())
    if n1 == 0 or n1 == len(b):
        return None
    xs, order, miss, cuts = _ordered_prepare(x, order)
    nn = len(xs)
    cuts = cuts[(cuts >= min_size) & (nn - cuts >= min_size)]
    if len(cuts) == 0:
        return None
    gains = _info_scan(b[order], b[miss], cuts)
    k = int(cuts[_pick(gains, cuts, nn - cuts)])
    thr = _threshold(xs, k)
    groups = [order[:k], order[k:], miss]
    return _make_threshold_result(name, column, thr, groups,
                                  info_partition_gain(y_orig, groups, n_classes))


# -- categorical predictors -------------------------------------------------


def _categ_groups(x: np.ndarray, left_codes: np.ndarray):
    x = np.asarray(x)
    in_left = np.isin(x, left_codes)
    nm = x >= 0
    return [np.flatnonzero(in_left), np.flatnonzero(nm & ~in_left), np.flatnonzero(~nm)]


def best_categ_split(
    x: np.ndarray,
    y: np.ndarray,
    min_size: int = 1,
    *,
    name: str = "x",
    column: Column | None = None,
) -> SplitResult | None:
    """Subset split of a categorical predictor for a numeric target.

    Categories present in the sample are ordered by mean of y (ties by level
    code) and every prefix of that order is tried as the left subset.
    """
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    sigma = pop_sd(y)
    if sigma == 0.0:
        return None
    nm = x >= 0
    codes = x[nm]
    yn = y[nm]
    if len(codes) == 0:
        return None
    m = int(codes.max()) + 1
    cnt = np.bincount(codes, minlength=m)
    present = np.flatnonzero(cnt > 0)
    if len(present) < 2:
        return None
    center = float(np.mean(y))
    d = yn - center
    sums = np.bincount(codes, weights=d, minlength=m)
    means = sums / np.maximum(cnt, 1)
    dev = d - means[codes]
    m2 = np.bincount(codes, weights=dev * dev, minlength=m)

    order = present[np.lexsort((present, means[present]))]
    c_n = cnt[order].astype(np.float64)
    c_mean = means[order]
    c_m2 = m2[order]
    kk = len(order)
    # prefix/suffix moments merged pairwise (Chan et al.)
    ln, lmean, lm2 = _merge_prefix(c_n, c_mean, c_m2)
    rn, rmean, rm2 = _merge_prefix(c_n[::-1], c_mean[::-1], c_m2[::-1])
    rn, rm2 = rn[::-1], rm2[::-1]
    cut_idx = np.arange(1, kk)  # number of categories on the left
    nl = ln[cut_idx - 1]
    nr = rn[cut_idx]
    ok = (nl >= min_size) & (nr >= min_size)
    if not ok.any():
        return None
    cut_idx, nl, nr = cut_idx[ok], nl[ok], nr[ok]
    sd_l = np.sqrt(lm2[cut_idx - 1] / nl)
    sd_r = np.sqrt(rm2[cut_idx] / nr)
    yu = y[~nm]
    pooled = nl * sd_l + nr * sd_r + len(yu) * pop_sd(yu)
    gains = (sigma - pooled / n) / sigma
    j = int(cut_idx[_pick(gains, nl, nr)])
    return _make_subset_result(name, column, x, order[:j], order[j:],
                               lambda g: sd_partition_gain(y, g))


def _merge_prefix(n: np.ndarray, mean: np.ndarray, m2: np.ndarray):
    out_n = np.empty_like(n)
    out_mean = np.empty_like(mean)
    out_m2 = np.empty_like(m2)
    cn, cm, cq = 0.0, 0.0, 0.0
    for i in range(len(n)):
        nb, mb, qb = n[i], mean[i], m2[i]
        tot = cn + nb
        delta = mb - cm
        cm = cm + delta * nb / tot
        cq = cq + qb + delta * delta * cn * nb / tot
        cn = tot
        out_n[i], out_mean[i], out_m2[i] = cn, cm, cq
    return out_n, out_mean, out_m2


def _make_subset_result(name, column, x, left_codes, right_codes, gain_fn, category=None):
    groups = _categ_groups(x, left_codes)
    lc = subset_condition(column, name, left_codes)
    rc = subset_condition(column, name, right_codes)
    mc = missing_conditions(name)[1] if len(groups[2]) else None
    return SplitResult(name, lc, rc, mc, float(gain_fn(groups)), len(groups[0]),
                       len(groups[1]), len(groups[2]), category)


def _binarized_categ(x, y_tilde, y_orig, min_size, name, column, n_classes):
    x = np.asarray(x)
    b = np.asarray(y_tilde, dtype=np.int64)
    n1 = int(b.sum())
    if n1 == 0 or n1 == len(b):
        return None
    nm = x >= 0
    codes = x[nm]
    if len(codes) == 0:
        return None
    m = int(codes.max()) + 1
    cnt = np.bincount(codes, minlength=m)
    ones = np.bincount(codes, weights=b[nm], minlength=m).round().astype(np.int64)
    present = np.flatnonzero(cnt > 0)
    if len(present) < 2:
        return None
    rate = ones / np.maximum(cnt, 1)
    order = present[np.lexsort((present, rate[present]))]
    c_n = np.cumsum(cnt[order])
    c_1 = np.cumsum(ones[order])
    kk = len(order)
    cut_idx = np.arange(1, kk)
    l_n, l_1 = c_n[cut_idx - 1], c_1[cut_idx - 1]
    r_n, r_1 = c_n[-1] - l_n, c_1[-1] - l_1
    ok = (l_n >= min_size) & (r_n >= min_size)
    if not ok.any():
        return None
    cut_idx, l_n, l_1, r_n, r_1 = cut_idx[ok], l_n[ok], l_1[ok], r_n[ok], r_1[ok]
    bu = b[~nm]
    u1 = int(bu.sum())
    parts = (_info_vec(np.stack([l_n - l_1, l_1], axis=1))
             + _info_vec(np.stack([r_n - r_1, r_1], axis=1))
             + info_value([len(bu) - u1, u1]))
    base = info_value([len(b) - n1, n1])
    gains = (base - parts) / base
    j = int(cut_idx[_pick(gains, l_n, r_n)])
    return _make_subset_result(name, column, x, order[:j], order[j:],
                               lambda g: info_partition_gain(y_orig, g, n_classes))


def best_split_binarized(
    x: np.ndarray,
    y_tilde: np.ndarray,
    y_orig: np.ndarray,
    min_size: int = 1,
    *,
    categorical: bool = False,
    name: str = "x",
    column: Column | None = None,
    order: np.ndarray | None = None,
    n_classes: int | None = None,
) -> SplitResult | None:
    """Split chosen on a binarized target, scored on the original classes.

    ``x`` is either an ordered predictor (float, NaN missing) or, with
    ``categorical=True``, level codes (negative for missing).
    """
    if categorical:
        return _binarized_categ(x, y_tilde, y_orig, min_size, name, column, n_classes)
    return _binarized_ordered(x, y_tilde, y_orig, min_size, name, column, order, n_classes)


def missingness_split(
    missing: np.ndarray,
    gain_fn,
    min_size: int,
    name: str,
) -> SplitResult | None:
    """Two-way split into rows with and without a value for the predictor."""
    missing = np.asarray(missing, dtype=bool)
    u = np.flatnonzero(missing)
    nm = np.flatnonzero(~missing)
    if len(u) < min_size or len(nm) < min_size:
        return None
    gain = gain_fn([nm, u])
    if not math.isfinite(gain):
        return None
    present, absent = missing_conditions(name)
    return SplitResult(name, present, absent, None, float(gain), len(nm), len(u), 0,
                       missing_only=True)
