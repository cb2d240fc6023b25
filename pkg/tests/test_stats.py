import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from shefields import solver, stats
from shefields.errors import (
    ConfigurationError,
    InsufficientDataError,
    PositivityError,
    PreconditionError,
)
from shefields.noise import GridSpec


def _normal(n, sd, seed=0):
    return 1.0 + sd * np.random.Generator(np.random.PCG64(seed)).standard_normal(n)


# ---------------------------------------------------------------------------
# upper tails


def test_gaussian_tail_regression():
    s = _normal(200_000, 0.6)
    rep = stats.survival_curve(s, np.linspace(0.6, 2.0, 10), case=2)
    assert rep.r2 > 0.98
    assert not rep.truncated


def test_survival_counts_match_direct_counting():
    s = _normal(20_000, 0.5, seed=3)
    lam = np.linspace(0.1, 1.5, 8)
    rep = stats.survival_curve(s, lam, case=2)
    for l, c in zip(rep.lambda_grid, rep.counts):
        assert c == np.count_nonzero(s > 1 + l)
    assert rep.log_surv == pytest.approx([math.log(c / s.size) for c in rep.counts])


def test_censored_paths_count_as_exceedances():
    s = np.arange(1.0, 11.0)
    assert stats.survival_counts(s, [5.0, 100.0], censored=2).tolist() == [7, 2]


def test_unresolvable_levels_are_dropped():
    s = _normal(10_000, 0.5)
    rep = stats.survival_curve(s, [0.1, 0.5, 1.0, 1.5, 5.0, 8.0], case=2)
    assert rep.truncated and rep.dropped == (5.0, 8.0)
    assert min(rep.counts) >= stats.MIN_COUNT


def test_degenerate_sample_has_no_tail():
    s = np.ones(10_000)
    assert stats.survival_counts(s, [1.5, 2.0, 10.0]).tolist() == [0, 0, 0]
    with pytest.raises(InsufficientDataError):
        stats.survival_curve(s, [1.5, 2.0, 10.0], case=1)


def test_tail_fit_preconditions():
    with pytest.raises(InsufficientDataError):
        stats.survival_curve(np.ones(100), [1.5, 2.0, 3.0], case=1)
    with pytest.raises(PreconditionError):
        stats.survival_curve(np.ones(10_000), [0.5, 2.0, 3.0], case=1)
    with pytest.raises(ConfigurationError):
        stats.survival_curve(np.ones(10_000), [1.5, 2.0, 3.0], case=3)


def test_lognormal_tail_is_near_linear_in_log_power():
    # log-normal: log P(u > l) ~ -(log l)^2 / 2 s^2; the case-1 regressor fits it well over a short range
    s = np.exp(0.6 * np.random.Generator(np.random.PCG64(0)).standard_normal(100_000))
    grid = stats.resolvable_grid(s, case=1)
    rep = stats.survival_curve(s, grid, case=1)
    assert rep.r2 > 0.9 and rep.slope < 0


@pytest.mark.parametrize("case", [1, 2])
def test_resolvable_grid_has_enough_exceedances(case):
    s = np.exp(0.5 * np.random.Generator(np.random.PCG64(5)).standard_normal(20_000))
    grid = stats.resolvable_grid(s, case)
    levels = grid if case == 1 else 1 + grid
    assert np.all(stats.survival_counts(s, levels) >= stats.MIN_COUNT)
    assert np.all(np.diff(grid) > 0)


def test_ks_normal_accepts_matching_law():
    d, crit = stats.ks_normal(_normal(10_000, 0.4), 1.0, 0.16)
    assert d < crit
    assert crit == pytest.approx(1.628 / math.sqrt(10_000), rel=0.01)


def test_ks_normal_rejects_wrong_variance():
    d, crit = stats.ks_normal(_normal(10_000, 0.4), 1.0, 0.25)
    assert d > crit


# ---------------------------------------------------------------------------
# small balls


def test_constant_sample_takes_upper_bound_branch():
    rep = stats.small_ball_curve(np.ones(1000), [0.5, 0.1])
    for p in rep.points:
        assert p.upper_bound_only and p.count == 0 and p.prob == 0.0
        assert p.ci[1] == pytest.approx(1 - 0.05 ** (1 / 1000))
        assert p.normalized is None and p.normalized_ci[0] == -math.inf


def test_eps_at_least_one_reads_sample_directly():
    s = np.array([0.5, 0.9, 1.1, 2.0, 3.0])
    p = stats.small_ball_point(s, 1.0)
    assert p.prob == pytest.approx(0.4)
    assert p.normalized is None


def test_clopper_pearson_interval():
    lo, hi = stats.clopper_pearson(5, 100)
    assert lo == pytest.approx(0.01643, abs=1e-4) and hi == pytest.approx(0.11284, abs=1e-4)
    assert stats.clopper_pearson(0, 10)[0] == 0.0
    assert stats.clopper_pearson(10, 10)[1] == 1.0


def test_plain_estimate_and_normalization():
    s = np.exp(np.random.Generator(np.random.PCG64(0)).standard_normal(100_000))
    p = stats.small_ball_point(s, 0.1)
    exact = sps.norm.cdf(math.log(0.1))
    assert p.ci[0] < exact < p.ci[1]
    assert p.normalized == pytest.approx(math.log(p.prob) / math.log(10))


def test_importance_weights_recover_gaussian_tail():
    # target N(0,1), proposal N(-3,1): P(X < -3) = Phi(-3)
    rng = np.random.Generator(np.random.PCG64(11))
    y = rng.standard_normal(20_000) - 3.0
    lw = -(y**2) / 2 + (y + 3.0) ** 2 / 2
    p = stats.small_ball_point(np.exp(y), math.exp(-3.0), log_weights=lw)
    assert p.weighted
    assert p.ci[0] < sps.norm.cdf(-3.0) < p.ci[1]
    assert p.prob == pytest.approx(sps.norm.cdf(-3.0), rel=0.05)


def test_weighted_needs_hits_and_matching_shapes():
    with pytest.raises(InsufficientDataError):
        stats.small_ball_point(np.ones(10), 0.5, log_weights=np.zeros(10))
    with pytest.raises(PreconditionError):
        stats.small_ball_point(np.ones(10), 0.5, log_weights=np.zeros(3))


def test_curve_uses_level_specific_samplers():
    plain = np.exp(np.random.Generator(np.random.PCG64(0)).standard_normal(50_000))
    rng = np.random.Generator(np.random.PCG64(1))
    y = rng.standard_normal(20_000) - 4.0
    lw = -(y**2) / 2 + (y + 4.0) ** 2 / 2
    rep = stats.small_ball_curve(plain, [0.5, 0.01], log_weights={0.01: (np.exp(y), lw)})
    assert not rep.point(0.5).weighted and rep.point(0.01).weighted
    assert rep.monotone()
    assert rep.point(0.01).normalized < rep.point(0.5).normalized
    assert rep.nonpositive == 0 and rep.moment_estimates[0][0] == 1


def test_nonpositive_samples_counted():
    rep = stats.small_ball_curve(np.array([-0.1, 0.0, 0.5, 2.0]), [0.1])
    assert rep.nonpositive == 2 and rep.moment_estimates == ()


# ---------------------------------------------------------------------------
# negative moments


def test_two_point_negative_moment():
    (m,) = stats.negative_moments([0.5, 2.0], [2])
    assert m.estimate == pytest.approx(2.125)


@pytest.mark.parametrize("k", [1, 2, 8, 20])
def test_unit_samples(k):
    (m,) = stats.negative_moments(np.ones(50), [k])
    assert m.estimate == 1.0
    assert m.stabilized == 0.0


def test_jackknife_reproduces_standard_error():
    s = np.random.Generator(np.random.PCG64(0)).uniform(0.5, 2.0, 500)
    (m,) = stats.negative_moments(s, [1])
    se = np.std(1 / s, ddof=1) / math.sqrt(s.size)
    assert (m.ci[1] - m.ci[0]) / 2 == pytest.approx(1.959963984540054 * se, rel=1e-9)


def test_dominated_flag():
    s = np.r_[np.ones(99), 1e-3]
    (m,) = stats.negative_moments(s, [2])
    assert m.dominated


def test_negative_moment_errors():
    with pytest.raises(PositivityError):
        stats.negative_moments([1.0, 0.0], [2])
    with pytest.raises(PreconditionError):
        stats.negative_moments([1.0, 2.0], [21])
    with pytest.raises(PreconditionError):
        stats.negative_moments([1.0, 2.0], [0.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=30))
def test_negative_moments_monotone_in_k_on_unit_interval(sample):
    est = [m.estimate for m in stats.negative_moments(sample, [1, 2, 4, 8])]
    assert all(b >= a * (1 - 1e-12) for a, b in zip(est, est[1:]))


# ---------------------------------------------------------------------------
# lower envelope


def _flat(value, n=400, dx=0.1):
    spec = GridSpec(nx=n, length=n * dx, dt=dx * dx, nt=1)
    return solver.FieldSnapshot(spec, 0.0, np.full(n, value))


def test_unit_fields_never_dip():
    rows = stats.lower_envelope_check([_flat(1.0)] * 3, zeta=0.5, n_grid=[2, 4, 8])
    assert [r.frequency for r in rows] == [0, 0, 0]


def test_envelope_frequency_counts_fields():
    fields = [_flat(1.0), _flat(0.01)]
    (row,) = stats.lower_envelope_check(fields, zeta=0.5, n_grid=[4])
    assert row.count == 1 and row.frequency == 0.5
    assert row.threshold == pytest.approx(math.exp(-0.5 * math.log(4) ** (2 / 3)))
    assert row.scaled == pytest.approx(8.0)


def test_envelope_errors():
    with pytest.raises(ConfigurationError):
        stats.lower_envelope_check([_flat(1.0)], 0.5, [16, 32])
    with pytest.raises(PreconditionError):
        stats.lower_envelope_check([_flat(1.0)], 0.5, [4, 2])


@pytest.mark.parametrize("eps", [0.0, -0.5])
def test_small_ball_level_must_be_positive(eps):
    with pytest.raises(PreconditionError):
        stats.small_ball_point(np.ones(10), eps)


def test_resolvable_grid_needs_a_tail():
    with pytest.raises(InsufficientDataError):
        stats.resolvable_grid(np.full(100, 0.5), case=1)
