import math
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from astpa.pcn import (
    BETA_MAX,
    BETA_MIN,
    ChainState,
    PcnConfig,
    accept_probability,
    adapt_beta,
    burn_in_split,
    default_alpha_star,
    propose,
    run_chain,
    run_chains,
    step,
)
from astpa.target import LimitState, SmoothedTarget

L_AT_ZERO = 0.100227691255845329  # closed form, see test_target


class FixedNormals:
    """Stand-in stream whose standard normals are a fixed vector."""

    def __init__(self, xi):
        self.xi = np.asarray(xi, dtype=float)
        self.drawn = 0

    def standard_normal(self, shape):
        self.drawn += int(np.prod(shape))
        return np.broadcast_to(self.xi, shape).copy()


def linear_target(beta_r=2.0, d=2, likelihood=True):
    ls = LimitState(lambda x: beta_r - x[:, 0], d)
    return SmoothedTarget(ls, sigma=0.3, g_c=1.0, likelihood=likelihood)


# -- propose -----------------------------------------------------------------

def test_beta_one_is_independent_draw():
    xi = np.array([0.3, -1.2, 2.0])
    assert np.allclose(propose(np.array([5.0, 5.0, 5.0]), 1.0, FixedNormals(xi)), xi, atol=0)


def test_small_beta_stays_put():
    x = np.array([1.5, -0.7])
    prop = propose(x, 1e-8, np.random.default_rng(0))
    assert np.allclose(prop, x, atol=1e-6)


def test_unit_vector_example():
    x = np.array([2.0, -1.0, 0.5])
    e1 = np.array([1.0, 0.0, 0.0])
    assert np.allclose(propose(x, 0.6, FixedNormals(e1)), 0.8 * x + 0.6 * e1, atol=1e-15)


def test_propose_consumes_d_normals():
    fake = FixedNormals(np.zeros(7))
    propose(np.ones(7), 0.5, fake)
    assert fake.drawn == 7


@given(st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_proposal_detailed_balance(beta, seed):
    rng = np.random.default_rng(seed)
    d = 3
    x, y = rng.standard_normal(d) * 2, rng.standard_normal(d) * 2
    a = math.sqrt(1 - beta * beta)
    prior = stats.multivariate_normal(np.zeros(d), np.eye(d))
    fwd = prior.logpdf(x) + stats.multivariate_normal(a * x, beta**2 * np.eye(d)).logpdf(y)
    bwd = prior.logpdf(y) + stats.multivariate_normal(a * y, beta**2 * np.eye(d)).logpdf(x)
    assert math.exp(fwd - bwd) == pytest.approx(1.0, rel=1e-10)


# -- acceptance ---------------------------------------------------------------

def test_acceptance_non_negative_log_ratio():
    assert accept_probability(-1.0, -2.0) == 1.0
    assert accept_probability(-1.0, -1.0) == 1.0


def test_acceptance_half():
    assert accept_probability(math.log(0.25), math.log(0.5)) == pytest.approx(0.5, abs=1e-15)


def test_acceptance_between_closed_form_likelihoods():
    sigma = 0.3
    target = linear_target()
    log_l_zero = target.log_likelihood(0.0)
    log_l_half = target.log_likelihood(-1.21 * sigma)
    alpha = accept_probability(log_l_zero, log_l_half)
    assert alpha == pytest.approx(2 * L_AT_ZERO, abs=1e-9)
    assert alpha == pytest.approx(0.20032, abs=1e-3)


def test_both_outside_support_gives_zero(caplog):
    assert accept_probability(-math.inf, -math.inf) == 0.0
    assert "outside the target support" in caplog.text


@given(st.floats(-700, 0), st.floats(-700, 0))
def test_acceptance_in_unit_interval(a, b):
    p = accept_probability(a, b)
    assert 0.0 <= p <= 1.0


# -- adaptation ---------------------------------------------------------------

def test_adapt_unchanged_at_target():
    assert adapt_beta(0.42, 0.3, 0.3, 5) == pytest.approx(0.42, abs=1e-15)


def test_adapt_first_step():
    assert adapt_beta(0.5, 0.9, 0.3, 1) == pytest.approx(0.911059400195254, abs=1e-12)


def test_adapt_clamped_above():
    assert adapt_beta(0.9, 1.0, 0.2, 1) == BETA_MAX == 0.999


def test_adapt_clamped_below():
    assert adapt_beta(2e-4, 0.0, 0.9, 1) == BETA_MIN


def test_adapt_rejects_t_zero():
    with pytest.raises(ValueError):
        adapt_beta(0.5, 0.5, 0.3, 0)


@given(st.floats(BETA_MIN, BETA_MAX), st.floats(0, 1), st.floats(0.05, 0.95), st.integers(1, 10**6))
def test_adapt_stays_in_bounds_and_moves_toward_target(beta, alpha, target, t):
    new = adapt_beta(beta, alpha, target, t)
    assert BETA_MIN <= new <= BETA_MAX
    if alpha > target:
        assert new >= beta or new == BETA_MAX
    elif alpha < target:
        assert new <= beta or new == BETA_MIN


def test_alpha_star_dimension_rule():
    assert default_alpha_star(2) == 0.35 and default_alpha_star(19) == 0.35
    assert default_alpha_star(20) == 0.25 and default_alpha_star(200) == 0.25


def test_running_acceptance_converges_to_target():
    target = linear_target(beta_r=2.0)
    res = run_chain(np.array([2.5, 0.0]), target, PcnConfig(1000), np.random.default_rng(3))
    alpha_star = default_alpha_star(2)
    assert abs(res.accept_prob[0].mean() - alpha_star) < 0.1
    assert abs(res.accepted[0, 200:].mean() - alpha_star) < 0.1


# -- chains -------------------------------------------------------------------

def test_rejections_do_not_reevaluate():
    target = linear_target()
    ls = target.limit_state
    seeds = np.array([[2.5, 0.0], [3.0, 1.0], [2.2, -1.0]])
    before = ls.call_counter
    res = run_chains(seeds, target, PcnConfig(200), np.random.default_rng(1), seed_g=2.0 - seeds[:, 0])
    assert ls.call_counter - before == res.model_calls == 3 * 200
    assert (~res.accepted).sum() > 0
    # a rejected step repeats the previous state exactly
    rej = ~res.accepted[:, 1:]
    assert np.array_equal(res.samples[:, 1:][rej], res.samples[:, :-1][rej])


def test_seed_g_omitted_costs_one_call_per_chain():
    target = linear_target()
    res = run_chains(np.array([[2.5, 0.0], [3.0, 0.0]]), target, PcnConfig(10), np.random.default_rng(0))
    assert res.model_calls == 2 + 2 * 10


def test_batch_of_one_matches_single_chain():
    target = linear_target()
    a = run_chain(np.array([2.5, 0.3]), target, PcnConfig(50), np.random.default_rng(9))
    b = run_chains(np.array([[2.5, 0.3]]), target, PcnConfig(50), np.random.default_rng(9))
    assert np.array_equal(a.samples, b.samples)


def test_step_function_agrees_with_acceptance():
    target = linear_target()
    g0 = 2.0 - 2.5
    state = ChainState(np.array([2.5, 0.0]), target.log_likelihood(g0), g0, beta=0.5)
    rng = np.random.default_rng(4)
    for _ in range(100):
        state = step(state, target, 0.35, rng)
    assert state.step_index == 101
    assert 0 < state.accept_count <= 100
    assert state.current_g == pytest.approx(2.0 - state.current[0])


def test_prior_invariance_small():
    target = linear_target(likelihood=False)
    res = run_chains(np.zeros((4, 2)), target, PcnConfig(2000), np.random.default_rng(11))
    assert res.acceptance_rate == 1.0
    x = res.samples[:, ::10].reshape(-1, 2)
    for j in range(2):
        assert stats.kstest(x[:, j], "norm").pvalue > 0.01


def test_deterministic_given_seed():
    target = linear_target()
    a = run_chains(np.array([[2.5, 0.0]] * 3), target, PcnConfig(40), np.random.default_rng(5))
    b = run_chains(np.array([[2.5, 0.0]] * 3), target, PcnConfig(40), np.random.default_rng(5))
    assert np.array_equal(a.samples, b.samples) and np.array_equal(a.betas, b.betas)


def test_counter_is_thread_safe():
    ls = LimitState(lambda x: x[:, 0], 1)

    def work():
        for _ in range(500):
            ls(np.zeros((3, 1)))

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert ls.call_counter == 8 * 500 * 3


@given(st.integers(1, 40), st.integers(1, 2000))
def test_burn_in_split_total(n_chains, length):
    b = burn_in_split(n_chains, length)
    assert b.sum() == math.floor(0.1 * n_chains * length + 1e-9)
    assert b.max() - b.min() <= 1


def test_config_validation():
    with pytest.raises(ValueError):
        PcnConfig(10, beta0=0.0)
    with pytest.raises(ValueError):
        PcnConfig(0)
    with pytest.raises(ValueError):
        PcnConfig(10, alpha_star=1.0)
