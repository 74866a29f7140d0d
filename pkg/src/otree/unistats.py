"""Univariate outlier machinery.

Numeric samples are standardized with trimmed moments and flagged when a
value sits beyond ``z_outlier`` and is separated from its inner neighbour by
at least ``z_gap``. Heavy tails are detected from the spread of the central
half of the data and either removed with a log/exp transform or marked so
that extremes on that side are never flagged. Categorical samples are
flagged by comparing conditional proportions against full-data priors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from otree.params import Params


class InsufficientDataError(ValueError):
    """Sample too small for the requested statistic."""


def tail_count(n: int, p_o: float) -> int:
    """Number of observations treated as the tail of a sample of size n.

    Evaluates ``floor(n*p_o + 2*n*sqrt(p_o*(1-p_o)/n) + 1)``. Results that land
    within a few ulps of an integer are snapped to it so that exactly integral
    values are not lost to rounding.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    v = n * p_o + 2.0 * n * math.sqrt(p_o * (1.0 - p_o) / n) + 1.0
    r = round(v)
    if abs(v - r) <= 64 * math.ulp(v):
        return int(r)
    return math.floor(v)


def trimmed_moments(x: np.ndarray, n_tail: int, *, presorted: bool = False) -> tuple[float, float]:
    """Mean and inflated sd with the ``n_tail`` lowest and highest values dropped.

    The sd (ddof=1) of the central values is multiplied by
    ``(n + n_tail) / (n - n_tail)``. ``presorted`` skips sorting for callers
    that pass an ascending NaN-free sample.
    """
    x = np.asarray(x, dtype=np.float64)
    if not presorted:
        x = np.sort(x[~np.isnan(x)])
    n = len(x)
    if n <= 2 * n_tail:
        raise InsufficientDataError(f"need more than {2 * n_tail} values, got {n}")
    mid = x[n_tail:n - n_tail]
    if mid[0] == mid[-1]:
        return float(mid[0]), 0.0
    # exactly rounded sums keep the error at a few ulps even for means near 0
    vals = mid.tolist()
    mu = math.fsum(vals) / len(vals)
    dev = mid - mu
    sd = math.sqrt(math.fsum((dev * dev).tolist()) / (len(vals) - 1))
    return mu, sd * (n + n_tail) / (n - n_tail)


def _central_moments(xs: np.ndarray) -> tuple[float, float]:
    """Mean and 2.5x sd of the interquartile slice of a sorted sample."""
    p25, p75 = np.percentile(xs, [25.0, 75.0])
    central = xs[(xs >= p25) & (xs <= p75)]
    if len(central) < 2 or central[0] == central[-1]:
        return float(np.mean(central)), 0.0
    return float(np.mean(central)), 2.5 * float(np.std(central, ddof=1))


@dataclass(frozen=True)
class Transform:
    """Monotone map applied to a numeric column before flagging.

    ``log``: ``log(x + shift)``. ``exp``: ``exp((x - center) / scale)``.
    """

    kind: str = "none"
    shift: float = 0.0
    center: float = 0.0
    scale: float = 1.0

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if self.kind == "log":
                out = np.log(x + self.shift)
                # below the training minimum: treat as infinitely low
                return np.where(np.isnan(out) & ~np.isnan(x), -np.inf, out)
            if self.kind == "exp":
                return np.exp((x - self.center) / self.scale)
        return x

    def to_dict(self) -> dict:
        if self.kind == "none":
            return {"kind": "none"}
        if self.kind == "log":
            return {"kind": "log", "shift": self.shift}
        return {"kind": "exp", "center": self.center, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> Transform:
        kind = d["kind"]
        if kind == "none":
            return cls()
        if kind == "log":
            return cls("log", shift=float(d["shift"]))
        if kind == "exp":
            return cls("exp", center=float(d["center"]), scale=float(d["scale"]))
        raise ValueError(f"unknown transform kind {kind!r}")


NO_TRANSFORM = Transform()


@dataclass(frozen=True)
class TailCheck:
    transform: Transform = NO_TRANSFORM
    has_left_tail: bool = False
    has_right_tail: bool = False


def check_dist_tails(x: np.ndarray, params: Params) -> tuple[TailCheck, np.ndarray]:
    """Decide between exp/log transforms and tail flags for one sample.

    Returns the decision and the (possibly) transformed sample in input order.
    When both sides would accept a transform, neither is applied and both
    tails are flagged since no single monotone map fixes both. With
    ``params.transforms`` off every offending side is flagged as a tail.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    n_tail = tail_count(n, params.p_o)
    if n <= 2 * n_tail:
        raise InsufficientDataError(f"need more than {2 * n_tail} values, got {n}")
    xs = np.sort(x)
    mu, sigma = _central_moments(xs)
    if sigma == 0.0:
        return TailCheck(), x
    z = (xs - mu) / sigma
    lo_k, hi_k = n_tail - 1, n - n_tail

    exp_tf = None
    left_tail = False
    if z[lo_k] < -params.z_tail:
        t = Transform("exp", center=mu, scale=sigma)
        xt = t.apply(xs)
        mu_t, s_t = _central_moments(xt) if np.all(np.isfinite(xt)) else (0.0, 0.0)
        if params.transforms and s_t > 0.0 and (xt[lo_k] - mu_t) / s_t >= -params.z_tail:
            exp_tf = t
        else:
            left_tail = True

    log_tf = None
    right_tail = False
    if z[hi_k] > params.z_tail:
        t = Transform("log", shift=params.eps_log - xs[0])
        xt = t.apply(xs)
        mu_t, s_t = _central_moments(xt)
        if params.transforms and s_t > 0.0 and (xt[hi_k] - mu_t) / s_t <= params.z_tail:
            log_tf = t
        else:
            right_tail = True

    if exp_tf is not None and log_tf is not None:
        return TailCheck(NO_TRANSFORM, True, True), x
    chosen = exp_tf or log_tf
    if chosen is None:
        return TailCheck(NO_TRANSFORM, left_tail, right_tail), x
    return TailCheck(chosen, left_tail, right_tail), chosen.apply(x)


def check_log_transform_legacy(x: np.ndarray, eps: float) -> bool:
    """Quartile-ratio log criterion kept for compatibility runs."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0 or not x.min() > eps:
        return False
    p25, p50, p75 = np.percentile(x, [25.0, 50.0, 75.0])
    if p75 == p50:
        return False
    r1 = (math.log(p50) - math.log(p25)) / (math.log(p75) - math.log(p50))
    r2 = (p50 - p25) / (p75 - p50)
    return r2 < 1.0 and abs(r1 - 1.0) < abs(r2 - 1.0)


def legacy_tails(x: np.ndarray, params: Params) -> tuple[TailCheck, np.ndarray]:
    """Legacy log decision followed by tail flags on the chosen scale."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    n_tail = tail_count(n, params.p_o)
    if n <= 2 * n_tail:
        raise InsufficientDataError(f"need more than {2 * n_tail} values, got {n}")
    use_log = params.transforms and check_log_transform_legacy(x, params.eps_legacy)
    tf = Transform("log") if use_log else NO_TRANSFORM
    xt = tf.apply(x)
    xs = np.sort(xt)
    mu, sigma = _central_moments(xs)
    if sigma == 0.0:
        return TailCheck(tf), xt
    z = (xs - mu) / sigma
    return TailCheck(tf, bool(z[n_tail - 1] < -params.z_tail),
                     bool(z[n - n_tail] > params.z_tail)), xt


@dataclass
class FlagSet:
    """Flagged positions within an analyzed sample.

    ``scores`` are z-values for numeric samples and proportion ratios for
    categorical ones; ``directions`` is -1/+1 (low/high) or 0 for categorical.
    """

    indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    scores: np.ndarray = field(default_factory=lambda: np.empty(0))
    directions: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int8))

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class NumericStats:
    n: int
    n_tail: int
    mu_adj: float
    sigma_adj: float
    transform: Transform
    has_left_tail: bool
    has_right_tail: bool
    lo_thr: float | None
    hi_thr: float | None
    # display statistics, original units, outliers excluded
    mean: float
    sd: float
    min_nonoutlier: float
    max_nonoutlier: float
    n_below: int
    n_above: int

    @property
    def pct_below(self) -> float:
        """Percent of the sample at or below the largest non-outlier."""
        return 100.0 * self.n_below / self.n

    @property
    def pct_above(self) -> float:
        """Percent of the sample at or above the smallest non-outlier."""
        return 100.0 * self.n_above / self.n

    def zscores(self, x: np.ndarray) -> np.ndarray:
        t = self.transform.apply(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            return (t - self.mu_adj) / self.sigma_adj

    def flag_new(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flags and z-values for new values against the saved thresholds."""
        x = np.asarray(x, dtype=np.float64)
        if self.sigma_adj == 0.0:
            return np.zeros(len(x), dtype=bool), np.zeros(len(x))
        z = self.zscores(x)
        out = np.zeros(len(x), dtype=bool)
        if self.hi_thr is not None:
            out |= z >= self.hi_thr
        if self.lo_thr is not None:
            out |= z <= self.lo_thr
        return out & ~np.isnan(x), z


def flag_outliers_numeric(
    x: np.ndarray,
    params: Params,
    tails: tuple[bool, bool] = (False, False),
    *,
    original: np.ndarray | None = None,
    transform: Transform = NO_TRANSFORM,
    order: np.ndarray | None = None,
) -> tuple[FlagSet, NumericStats]:
    """Flag gap-separated extremes of an (already transformed) sample.

    A tail position is flagged when its z-value is beyond ``z_outlier`` and
    the gap to the next inner value is at least ``z_gap``; every value more
    extreme than a flagged one is flagged as well. ``original`` holds the
    untransformed values used for the display statistics. ``order`` may pass
    a precomputed stable ascending argsort of ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    orig = x if original is None else np.asarray(original, dtype=np.float64)
    n = len(x)
    n_tail = tail_count(n, params.p_o)
    if order is None:
        order = np.argsort(x, kind="stable")
    xs = x[order]
    mu, sigma = trimmed_moments(xs, n_tail, presorted=True)
    has_left, has_right = tails

    n_low = n_high = 0
    z = np.zeros(n)
    if sigma > 0.0:
        z = (xs - mu) / sigma
        zo, zg = params.z_outlier, params.z_gap
        for i in range(n_tail):
            if z[i] <= -zo and z[i + 1] - z[i] >= zg:
                n_low = i + 1
            j = n - 1 - i
            if z[j] >= zo and z[j] - z[j - 1] >= zg:
                n_high = i + 1
        if has_left:
            n_low = 0
        if has_right:
            n_high = 0

    pos = np.r_[np.arange(n_low), np.arange(n - n_high, n)].astype(np.int64)
    flags = FlagSet(
        indices=order[pos],
        scores=z[pos],
        directions=np.r_[-np.ones(n_low), np.ones(n_high)].astype(np.int8),
    )

    keep = np.ones(n, dtype=bool)
    keep[order[pos]] = False
    normal = orig[keep]
    z_lo, z_hi = z[n_low], z[n - 1 - n_high]
    degenerate = sigma == 0.0
    lo_thr = None if (has_left or degenerate) else min(z_lo - params.z_gap, -params.z_outlier)
    hi_thr = None if (has_right or degenerate) else max(z_hi + params.z_gap, params.z_outlier)
    lo_v, hi_v = float(normal.min()), float(normal.max())
    stats = NumericStats(
        n=n,
        n_tail=n_tail,
        mu_adj=mu,
        sigma_adj=sigma,
        transform=transform,
        has_left_tail=has_left,
        has_right_tail=has_right,
        lo_thr=lo_thr,
        hi_thr=hi_thr,
        mean=float(np.mean(normal)),
        sd=float(np.std(normal, ddof=1)) if len(normal) > 1 else 0.0,
        min_nonoutlier=lo_v,
        max_nonoutlier=hi_v,
        n_below=int(np.count_nonzero(orig <= hi_v)),
        n_above=int(np.count_nonzero(orig >= lo_v)),
    )
    return flags, stats


def numeric_tails(x: np.ndarray, params: Params) -> tuple[TailCheck, np.ndarray]:
    """Transform/tail decision for a full target column."""
    if params.legacy_transform:
        return legacy_tails(x, params)
    return check_dist_tails(x, params)


# -- categorical ------------------------------------------------------------


def lower_proportion_bound(p_prior, n_prior: int, z_normal: float):
    p_prior = np.asarray(p_prior, dtype=np.float64)
    return np.minimum(p_prior - z_normal * np.sqrt(p_prior * (1.0 - p_prior) / n_prior),
                      p_prior / 2.0)


@dataclass(frozen=True)
class CategStats:
    """Category counts of a sample alongside the full-data priors."""

    counts: np.ndarray
    priors: np.ndarray
    n_prior: int
    p_low: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def m(self) -> int:
        return int(np.count_nonzero(self.counts))

    @property
    def proportions(self) -> np.ndarray:
        return self.counts / max(self.n, 1)

    @property
    def new_category_prior(self) -> float:
        return 1.0 / (self.n_prior + 1)

    @classmethod
    def full(cls, codes: np.ndarray, n_levels: int, params: Params) -> CategStats:
        """Stats of an unconditioned column; its proportions are the priors."""
        counts = np.bincount(codes[codes >= 0], minlength=n_levels).astype(np.int64)
        n = int(counts.sum())
        priors = counts / n
        return cls(counts, priors, n, lower_proportion_bound(priors, n, params.z_normal))

    def conditioned(self, codes: np.ndarray) -> CategStats:
        counts = np.bincount(codes[codes >= 0], minlength=len(self.priors)).astype(np.int64)
        return CategStats(counts, self.priors, self.n_prior, self.p_low)


def _alg_categ(counts: np.ndarray, p_low: np.ndarray, params: Params) -> tuple[int, float] | None:
    """Category whose rows are outliers in a conditioned sample, with its score."""
    present = np.flatnonzero(counts > 0)
    n = int(counts.sum())
    if n == 0:
        return None
    n_tail = tail_count(n, params.p_o)
    c_present = counts[present]
    order = np.lexsort((present, c_present))
    codes = present[order]
    cnt = c_present[order]
    p = cnt / n
    m = len(codes)
    m_tail = m
    zn = params.z_normal
    for i in range(m - 1):
        spread = max(p[i] * (1 - p[i]), p[i + 1] * (1 - p[i + 1]))
        if p[i + 1] - p[i] > zn * math.sqrt(spread / n) and p[i + 1] / 2 > p[i]:
            m_tail = i + 1
    if int(cnt[:m_tail].sum()) < n_tail:
        for i in range(m_tail):
            if p[i] < p_low[codes[i]]:
                return int(codes[i]), float(p[i] / p_low[codes[i]])
    return None


def flag_outliers_categ(x: np.ndarray, priors: CategStats, params: Params) -> FlagSet:
    """Flag every row of the first under-represented rare category in ``x``.

    ``x`` holds level codes of a conditioned subsample (missing codes < 0 are
    ignored); ``priors`` are the stats of the full column.
    """
    x = np.asarray(x)
    stats = priors.conditioned(x)
    hit = _alg_categ(stats.counts, stats.p_low, params)
    if hit is None:
        return FlagSet()
    code, score = hit
    idx = np.flatnonzero(x == code)
    return FlagSet(idx, np.full(len(idx), score), np.zeros(len(idx), dtype=np.int8))


def root_max_allowed(n: int, params: Params) -> int:
    lo, hi = params.root_categ_breaks
    if n < lo:
        return 1
    if n < hi:
        return 2
    return 3


def _root_categ(counts: np.ndarray, params: Params) -> tuple[int, float] | None:
    n = int(counts.sum())
    if n < params.root_categ_min_rows:
        return None
    present = np.flatnonzero(counts > 0)
    if len(present) < 2:
        return None
    cnt = counts[present]
    order = np.lexsort((present, cnt))
    least, second = present[order[0]], present[order[1]]
    if counts[least] <= root_max_allowed(n, params) and counts[second] >= params.root_categ_min_next:
        return int(least), float(counts[least] / counts[second])
    return None


def flag_outliers_categ_root(x: np.ndarray, n_levels: int, params: Params) -> FlagSet:
    """Flag the least common category of a full column under the root rules."""
    x = np.asarray(x)
    counts = np.bincount(x[x >= 0], minlength=n_levels)
    hit = _root_categ(counts, params)
    if hit is None:
        return FlagSet()
    code, score = hit
    idx = np.flatnonzero(x == code)
    return FlagSet(idx, np.full(len(idx), score), np.zeros(len(idx), dtype=np.int8))


def categ_new_value_rules(stats: CategStats, flagged: tuple[int, float] | None, params: Params,
                          root: bool) -> tuple[dict[int, float], float | None]:
    """Scores of the level codes (and of an unseen level) that flag in new data.

    Levels present in the sample flag only if the sample itself flagged them.
    Absent levels and unseen levels are judged by adding one observation of
    the value to the saved counts and re-running the same rule; unseen levels
    get prior ``1 / (n_prior + 1)``. Returns ``({code: score}, unseen_score)``
    with ``None`` when unseen levels do not flag.
    """
    def hit(counts: np.ndarray, p_low: np.ndarray, code: int) -> float | None:
        res = _root_categ(counts, params) if root else _alg_categ(counts, p_low, params)
        return res[1] if res is not None and res[0] == code else None

    scores: dict[int, float] = {}
    if flagged is not None:
        scores[int(flagged[0])] = float(flagged[1])
    for c in np.flatnonzero(stats.counts == 0):
        counts = stats.counts.copy()
        counts[c] += 1
        s = hit(counts, stats.p_low, int(c))
        if s is not None:
            scores[int(c)] = s
    new_low = lower_proportion_bound(stats.new_category_prior, stats.n_prior, params.z_normal)
    counts = np.append(stats.counts, 1)
    p_low = np.append(stats.p_low, new_low)
    return dict(sorted(scores.items())), hit(counts, p_low, len(stats.counts))
