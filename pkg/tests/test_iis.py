import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from astpa.gmm import GaussianMixture
from astpa.iis import IISError, estimate_constant, split_rule, variance_of_constant
from astpa.target import GaussianPrior, LimitState, SmoothedTarget

STD2 = GaussianMixture([1.0], [[0.0, 0.0]], [np.eye(2)])
WIDE = GaussianMixture([0.6, 0.4], [[0.3, 0.0], [-0.5, 0.4]], [1.5 * np.eye(2), 2.0 * np.eye(2)])


def scaled_normal(c):
    prior = GaussianPrior(2)
    return lambda x: math.log(c) + prior.log_pdf(x)


def test_zero_variance_importance_density():
    est = estimate_constant(scaled_normal(3.7), STD2, 100, np.random.default_rng(0))
    assert est.c_hat == pytest.approx(3.7, rel=1e-12)
    assert est.variance == pytest.approx(0.0, abs=1e-20)
    assert not est.min_branch


def test_disabled_likelihood_target_normalised():
    ls = LimitState(lambda x: 4.0 - x[:, 0], 2)
    target = SmoothedTarget(ls, sigma=0.3, g_c=1.0, likelihood=False)
    before = ls.call_counter
    est = estimate_constant(target, STD2, 64, np.random.default_rng(1))
    assert est.c_hat == pytest.approx(1.0, rel=1e-12)
    assert est.model_calls == ls.call_counter - before == 64


def test_split_rule_average():
    assert split_rule(1.0, 2.0) == (1.5, False)


def test_split_rule_minimum():
    assert split_rule(1.0, 4.0) == (1.0, True)
    assert split_rule(4.0, 1.0) == (1.0, True)


def test_split_rule_boundaries_inclusive():
    assert split_rule(1.0, 3.0) == (2.0, False)
    assert split_rule(3.0, 1.0) == (2.0, False)


@given(st.floats(1e-300, 1e300), st.floats(1e-300, 1e300))
def test_split_rule_within_halves(c1, c2):
    c, _ = split_rule(c1, c2)
    assert min(c1, c2) <= c <= max(c1, c2)
    assert c == min(c1, c2) or c == pytest.approx(0.5 * (c1 + c2))


def test_variance_equal_ratios():
    assert variance_of_constant([2.5] * 10) == 0.0


def test_variance_two_ratios():
    assert variance_of_constant([1.0, 3.0]) == pytest.approx(1.0, abs=1e-15)


def test_variance_four_ratios():
    assert variance_of_constant([2.0, 2.0, 2.0, 6.0]) == pytest.approx(1.0, abs=1e-15)


def test_variance_needs_two():
    with pytest.raises(ValueError):
        variance_of_constant([1.0])


@given(st.lists(st.floats(0, 1e6), min_size=2, max_size=50))
def test_variance_non_negative_and_matches_numpy(r):
    v = variance_of_constant(r)
    assert v >= 0
    assert v == pytest.approx(np.var(r, ddof=1) / len(r), rel=1e-9, abs=1e-12)


def test_reported_variance_uses_all_ratios_even_on_min_branch():
    # one huge ratio in the second half forces the min branch
    log_h = lambda x: np.where(np.arange(len(x)) == len(x) - 1, 10.0, 0.0) + STD2.log_pdf(x)  # noqa: E731
    est = estimate_constant(log_h, STD2, 10, np.random.default_rng(0))
    r = np.ones(10)
    r[-1] = math.exp(10.0)
    assert est.min_branch and est.c_hat == pytest.approx(1.0)
    assert est.variance == pytest.approx(variance_of_constant(r), rel=1e-12)


def test_unbiased_on_tractable_target():
    c = 2.5
    vals = [estimate_constant(scaled_normal(c), WIDE, 200, np.random.default_rng([4, i])).c_hat
            for i in range(200)]
    se = np.std(vals, ddof=1) / math.sqrt(len(vals))
    assert abs(np.mean(vals) - c) < 3 * se


@given(st.floats(1e-6, 1e6), st.integers(0, 2**31))
def test_scale_equivariance(s, seed):
    a = estimate_constant(scaled_normal(1.0), WIDE, 50, np.random.default_rng(seed))
    b = estimate_constant(scaled_normal(s), WIDE, 50, np.random.default_rng(seed))
    assert b.c_hat == pytest.approx(s * a.c_hat, rel=1e-12)
    assert b.c_half_1 == pytest.approx(s * a.c_half_1, rel=1e-12)
    assert b.min_branch == a.min_branch


def test_deep_tail_ratios_do_not_underflow():
    log_h = lambda x: -700.0 + STD2.log_pdf(x)  # noqa: E731
    est = estimate_constant(log_h, STD2, 20, np.random.default_rng(0))
    assert est.c_hat > 0 and math.log(est.c_hat) == pytest.approx(-700.0)


def test_unrepresentable_constant_fatal():
    with pytest.raises(IISError):
        estimate_constant(lambda x: -900.0 + STD2.log_pdf(x), STD2, 20, np.random.default_rng(0))


def test_m_must_be_even_and_at_least_two():
    for m in (0, 1, 7):
        with pytest.raises(ValueError):
            estimate_constant(scaled_normal(1.0), STD2, m, np.random.default_rng(0))


def test_all_zero_ratios_fatal():
    with pytest.raises(IISError):
        estimate_constant(lambda x: np.full(len(x), -np.inf), STD2, 10, np.random.default_rng(0))


def test_nan_ratio_fatal():
    with pytest.raises(IISError):
        estimate_constant(lambda x: np.full(len(x), np.nan), STD2, 10, np.random.default_rng(0))


def test_halves_in_draw_order():
    rng = np.random.default_rng(5)
    est = estimate_constant(scaled_normal(1.0), WIDE, 40, rng)
    x = WIDE.sample(40, np.random.default_rng(5))
    r = np.exp(scaled_normal(1.0)(x) - WIDE.log_pdf(x))
    assert est.c_half_1 == pytest.approx(r[:20].mean(), rel=1e-12)
    assert est.c_half_2 == pytest.approx(r[20:].mean(), rel=1e-12)
