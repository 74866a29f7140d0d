import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from otree.params import Params
from otree.unistats import (
    CategStats,
    InsufficientDataError,
    Transform,
    categ_new_value_rules,
    check_dist_tails,
    check_log_transform_legacy,
    flag_outliers_categ,
    flag_outliers_categ_root,
    flag_outliers_numeric,
    legacy_tails,
    lower_proportion_bound,
    root_max_allowed,
    tail_count,
    trimmed_moments,
)

P = Params()


# -- tail count ------------------------------------------------------------------


@pytest.mark.parametrize("n,want", [(1000, 17), (100, 3), (1, 1)])
def test_tail_count_examples(n, want):
    assert tail_count(n, 0.01) == want


def test_tail_count_exact_integer_case():
    # n*p_o + 2*sqrt(n*p_o*(1-p_o)) + 1 is exactly 9703 here
    assert tail_count(950796, 0.01) == 9703 == oracles.tail_count_exact_p01(950796)


@pytest.mark.parametrize("n", [1, 2, 10, 99, 100, 101, 12345, 10**6])
def test_tail_count_matches_integer_oracle(n):
    assert tail_count(n, 0.01) == oracles.tail_count_exact_p01(n)


def test_tail_count_rejects_empty():
    with pytest.raises(ValueError):
        tail_count(0, 0.01)


# -- trimmed moments -------------------------------------------------------------


def test_trimmed_constant():
    assert trimmed_moments(np.ones(50), 1) == (1.0, 0.0)


def test_trimmed_ramp():
    mu, sd = trimmed_moments(np.arange(1.0, 101.0), 2)
    mid = np.arange(3.0, 99.0)
    assert mu == pytest.approx(mid.mean(), rel=1e-15)
    assert sd == pytest.approx(np.std(mid, ddof=1) * 102 / 98, rel=1e-14)


def test_trimmed_too_small():
    with pytest.raises(InsufficientDataError):
        trimmed_moments(np.arange(4.0), 2)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=5, max_size=300), st.randoms())
def test_trimmed_matches_oracle_and_ignores_order(xs, rnd):
    n_tail = tail_count(len(xs), 0.01)
    if len(xs) <= 2 * n_tail:
        return
    mu, sd = trimmed_moments(np.array(xs), n_tail)
    rmu, rsd = oracles.trimmed_naive(xs, n_tail)
    scale = max(1.0, max(abs(v) for v in xs))
    assert abs(mu - rmu) <= 1e-12 * scale
    assert abs(sd - rsd) <= 1e-10 * max(rsd, 1e-300) or abs(sd - rsd) <= 1e-12 * scale
    shuffled = list(xs)
    rnd.shuffle(shuffled)
    assert trimmed_moments(np.array(shuffled), n_tail) == (mu, sd)


# -- numeric flagging ------------------------------------------------------------


def test_flags_single_planted_extreme():
    x = np.r_[np.arange(100) / 100, 10.0]
    flags, stats = flag_outliers_numeric(x, P)
    assert x[flags.indices].tolist() == [10.0]
    assert flags.directions.tolist() == [1]
    assert flags.scores[0] > 30
    assert stats.max_nonoutlier == 0.99 and stats.n_below == 100


def test_even_ramp_has_no_flags():
    flags, _ = flag_outliers_numeric(np.linspace(0, 1, 101), P)
    assert len(flags) == 0


def test_constant_sample_has_no_flags():
    flags, stats = flag_outliers_numeric(np.full(80, 3.0), P)
    assert len(flags) == 0
    assert stats.sigma_adj == 0.0 and stats.hi_thr is None and stats.lo_thr is None


def test_more_extreme_values_follow_a_flagged_one():
    # 100 and 101 sit together far from the bulk: 101's own gap is small,
    # but it lies beyond the flagged 100 and must be flagged too
    x = np.r_[np.linspace(0, 1, 200), 100.0, 101.0]
    flags, stats = flag_outliers_numeric(x, P)
    assert sorted(x[flags.indices].tolist()) == [100.0, 101.0]
    assert stats.max_nonoutlier == 1.0


def test_low_side_and_tail_suppression():
    x = np.r_[-10.0, np.linspace(0, 1, 200)]
    flags, _ = flag_outliers_numeric(x, P)
    assert flags.directions.tolist() == [-1]
    flags, stats = flag_outliers_numeric(x, P, tails=(True, False))
    assert len(flags) == 0 and stats.lo_thr is None and stats.hi_thr is not None


def test_new_value_thresholds():
    x = np.r_[np.arange(100) / 100, 10.0]
    _, s = flag_outliers_numeric(x, P)
    z_max = (0.99 - s.mu_adj) / s.sigma_adj
    assert s.hi_thr == max(z_max + P.z_gap, P.z_outlier)
    below = s.mu_adj + (s.hi_thr - 0.1) * s.sigma_adj
    above = s.mu_adj + (s.hi_thr + 0.1) * s.sigma_adj
    hit, _ = s.flag_new(np.array([0.5, below, above, np.nan]))
    assert hit.tolist() == [False, False, True, False]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(60, 400), st.floats(0.01, 1e3), st.floats(-1e4, 1e4))
def test_numeric_flag_budget_and_affine_invariance(seed, n, a, b):
    rng = np.random.default_rng(seed)
    x = rng.standard_t(2, size=n).round(3)
    flags, stats = flag_outliers_numeric(x, P)
    nt = tail_count(n, P.p_o)
    assert np.sum(flags.directions > 0) <= nt and np.sum(flags.directions < 0) <= nt
    assert np.all(np.abs(flags.scores) >= P.z_outlier)
    f2, _ = flag_outliers_numeric(a * x + b, P)
    assert sorted(f2.indices.tolist()) == sorted(flags.indices.tolist())
    perm = rng.permutation(n)
    f3, _ = flag_outliers_numeric(x[perm], P)
    assert sorted(x[perm][f3.indices].tolist()) == sorted(x[flags.indices].tolist())


# -- tails and transforms --------------------------------------------------------


def test_ramp_needs_no_transform():
    check, xt = check_dist_tails(np.linspace(0, 1, 1000), P)
    assert check.transform.kind == "none"
    assert not check.has_left_tail and not check.has_right_tail


def test_lognormal_grid_gets_log():
    g = np.linspace(-4, 4, 1000)
    check, xt = check_dist_tails(np.exp(g), P)
    assert check.transform.kind == "log" and not check.has_right_tail
    assert np.all(np.diff(xt) > 0)


def test_disabled_transforms_flag_the_tail():
    g = np.linspace(-4, 4, 1000)
    check, xt = check_dist_tails(np.exp(g), Params(transforms=False))
    assert check.transform.kind == "none" and check.has_right_tail
    assert np.array_equal(xt, np.exp(g))


def test_double_exponential_keeps_right_tail():
    g = np.linspace(-4, 4, 1000)
    check, _ = check_dist_tails(np.exp(np.exp(g)), P)
    assert check.transform.kind == "none" and check.has_right_tail


def test_left_skew_gets_exp():
    g = np.linspace(-4, 4, 1000)
    check, xt = check_dist_tails(-np.exp(g), P)
    assert check.transform.kind == "exp" and not check.has_left_tail
    # exp of z-scores is monotone, so flagging order is preserved
    assert np.all(np.diff(xt) < 0)


def test_degenerate_central_spread():
    x = np.r_[np.zeros(900), np.linspace(1, 100, 100)]
    check, xt = check_dist_tails(x, P)
    assert check.transform.kind == "none" and not check.has_right_tail


def test_transform_round_trip_and_below_minimum():
    t = Transform("log", shift=1e-3 - 2.0)
    assert Transform.from_dict(t.to_dict()) == t
    assert t.apply(np.array([1.0]))[0] == -np.inf
    e = Transform("exp", center=1.5, scale=0.25)
    assert Transform.from_dict(e.to_dict()) == e


def test_legacy_log_rule():
    assert not check_log_transform_legacy(np.array([1.0, 1, 2, 3, 3]), 1e-6)
    assert check_log_transform_legacy(np.array([1.0, 1, 2, 8, 8]), 1e-6)
    assert not check_log_transform_legacy(np.array([0.0, 1, 2, 8, 8]), 1e-6)
    assert not check_log_transform_legacy(np.array([1.0, 1, 2, 2, 2]), 1e-6)


def test_legacy_tails_use_chosen_scale():
    g = np.linspace(-4, 4, 1000)
    check, xt = legacy_tails(np.exp(g), P)
    assert check.transform.kind == "log"
    assert np.allclose(xt, g)


# -- categorical ------------------------------------------------------------------


def _prior(counts, params=P):
    codes = np.repeat(np.arange(len(counts)), counts)
    return CategStats.full(codes, len(counts), params)


def test_lower_bound_formula():
    p = np.array([0.3, 0.001])
    want = [min(0.3 - 2.67 * math.sqrt(0.21 / 10000), 0.15),
            min(0.001 - 2.67 * math.sqrt(0.001 * 0.999 / 10000), 0.0005)]
    assert lower_proportion_bound(p, 10000, 2.67).tolist() == pytest.approx(want, rel=1e-15)


def test_categ_rare_level_flagged():
    prior = _prior([3000, 3500, 3500])
    x = np.repeat([0, 1, 2], [2, 199, 299])
    flags = flag_outliers_categ(x, prior, P)
    assert len(flags) == 2 and set(x[flags.indices].tolist()) == {0}
    assert flags.scores[0] == pytest.approx((2 / 500) / 0.15)


def test_categ_matching_priors_not_flagged():
    prior = _prior([300, 350, 350])
    x = np.repeat([0, 1, 2], [30, 35, 35])
    assert len(flag_outliers_categ(x, prior, P)) == 0


def test_categ_single_level_not_flagged():
    prior = _prior([300, 350, 350])
    assert len(flag_outliers_categ(np.ones(120, dtype=int), prior, P)) == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 500), min_size=2, max_size=8))
def test_categ_full_sample_never_flags(counts):
    prior = _prior(counts)
    x = np.repeat(np.arange(len(counts)), counts)
    assert len(flag_outliers_categ(x, prior, P)) == 0


def test_root_rule():
    assert len(flag_outliers_categ_root(np.repeat([0, 1], [1, 799]), 2, P)) == 0
    x = np.repeat([0, 1, 2], [2, 300, 4698])
    assert len(flag_outliers_categ_root(x, 3, P)) == 0
    x = np.repeat([0, 1, 2], [1, 300, 4699])
    flags = flag_outliers_categ_root(x, 3, P)
    assert flags.indices.tolist() == [0]
    assert flags.scores[0] == pytest.approx(1 / 300)


def test_root_schedule():
    assert [root_max_allowed(n, P) for n in (5000, 10_000, 99_999, 100_000)] == [1, 2, 2, 3]


def test_new_value_rules_unseen_and_absent():
    prior = _prior([4000, 4000, 2000])
    x = np.repeat([0, 1], [300, 300])
    stats = prior.conditioned(x)
    scores, unseen = categ_new_value_rules(stats, None, P, root=False)
    # a common level absent from this branch flags when it shows up
    assert 2 in scores
    # an unseen level has negative p_low and is never below it
    assert unseen is None
    root_stats = CategStats.full(np.repeat([0, 1], [999, 300]), 2, P)
    scores, unseen = categ_new_value_rules(root_stats, None, P, root=True)
    assert scores == {} and unseen == pytest.approx(1 / 300)
    assert root_stats.new_category_prior == 1 / 1300
