import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphfolio.portfolio import (CommissionSchedule, ConvergenceError, PortfolioError, PortfolioState,
                                  all_cash, check_weights, drift_weights, episode_reward, growth,
                                  price_relatives, step_value, trade_volumes, transaction_factor)
from oracles import mu_bisection


def _simplex(rng, n):
    w = rng.dirichlet(np.full(n, rng.choice([0.2, 1.0, 5.0])))
    return w / w.sum()


def test_price_relatives_prepend_cash():
    y = price_relatives([110.0, 45.0], [100.0, 50.0])
    assert np.array_equal(y, [1.0, 1.1, 0.9])


def test_price_relatives_reject_nonpositive():
    with pytest.raises(PortfolioError):
        price_relatives([1.0, 0.0], [1.0, 1.0])


def test_drift_hand_example():
    w = drift_weights([0.5, 0.5], [1.0, 1.2])
    assert w == pytest.approx([0.5 / 1.1, 0.6 / 1.1], abs=1e-15)


def test_mu_matches_bisection_on_random_instances():
    rng = np.random.default_rng(0)
    worst, most_iters = 0.0, 0
    for _ in range(1000):
        n = int(rng.integers(2, 13))
        wd, wt = _simplex(rng, n), _simplex(rng, n)
        fees = CommissionSchedule(float(rng.uniform(0, 0.05)), float(rng.uniform(0, 0.05)))
        mu, iters = transaction_factor(wd, wt, fees, return_iterations=True)
        ref = mu_bisection(wd, wt, fees.sell, fees.buy)
        worst = max(worst, abs(mu - ref))
        most_iters = max(most_iters, iters)
        assert 0 < mu <= 1
    assert worst < 1e-10
    assert most_iters <= 200


def test_mu_exactly_one_without_fees_or_trades():
    rng = np.random.default_rng(1)
    for _ in range(100):
        wd, wt = _simplex(rng, 5), _simplex(rng, 5)
        assert transaction_factor(wd, wt, CommissionSchedule(0.0, 0.0)) == 1.0
        assert transaction_factor(wd, wd.copy(), CommissionSchedule(0.01, 0.02)) == 1.0


def test_mu_hand_example_all_cash_to_one_asset():
    # nothing to sell and all cash spent: only the buy fee bites
    fees = CommissionSchedule(0.0025, 0.0025)
    mu = transaction_factor(all_cash(1), np.array([0.0, 1.0]), fees)
    assert mu == pytest.approx(1 - 0.0025, abs=1e-12)


def test_mu_iteration_budget_reported():
    fees = CommissionSchedule(0.4, 0.4)
    with pytest.raises(ConvergenceError) as ei:
        transaction_factor([0.0, 0.5, 0.5], [0.0, 0.9, 0.1], fees, max_iter=2)
    assert 0 < ei.value.last <= 1


def test_commission_bounds():
    with pytest.raises(PortfolioError):
        CommissionSchedule(1.0, 0.0)
    with pytest.raises(PortfolioError):
        CommissionSchedule(0.0, -0.1)


def test_check_weights():
    with pytest.raises(PortfolioError):
        check_weights([0.6, 0.6])
    with pytest.raises(PortfolioError):
        check_weights([1.1, -0.1])
    assert check_weights([0.25, 0.75]).sum() == 1.0


def _episode(rng, m, steps, fees):
    prices = 100 * np.exp(np.cumsum(rng.normal(0, 0.02, (steps + 1, m)), axis=0))
    state = PortfolioState.initial(m, 1000.0)
    results = []
    for t in range(1, steps + 1):
        y = price_relatives(prices[t], prices[t - 1])
        results.append(step_value(state, y, _simplex(rng, m + 1), fees))
        state = results[-1].state
    return state, results


def test_accounting_identities_over_random_episodes():
    rng = np.random.default_rng(2)
    fees = CommissionSchedule(0.0025, 0.0025)
    for _ in range(20):
        state, res = _episode(rng, int(rng.integers(1, 8)), 100, fees)
        product = 1000.0
        for r in res:
            product *= 1.0 + r.rate
        assert abs(state.value - product) <= 1e-9 * state.value
        assert abs(state.value - 1000.0 * math.exp(math.fsum(r.log_return for r in res))) <= 1e-9 * state.value
        for r in res:
            w = r.state.weights
            assert w.min() >= -1e-12 and abs(w.sum() - 1) <= 1e-12
            assert r.w_drift.min() >= -1e-12 and abs(r.w_drift.sum() - 1) <= 1e-12


def test_product_form_with_explicit_mu_and_growth():
    rng = np.random.default_rng(3)
    fees = CommissionSchedule(0.001, 0.003)
    m = 3
    prices = 50 * np.exp(np.cumsum(rng.normal(0, 0.01, (101, m)), axis=0))
    state = PortfolioState.initial(m, 1.0)
    expected = 1.0
    for t in range(1, 101):
        y = price_relatives(prices[t], prices[t - 1])
        target = _simplex(rng, m + 1)
        g = float(np.dot(y, state.weights))
        mu = transaction_factor(drift_weights(state.weights, y), target, fees)
        expected *= mu * g
        state = step_value(state, y, target, fees).state
    assert abs(state.value - expected) < 1e-9


def test_frictionless_rebalancing_conserves_value():
    rng = np.random.default_rng(4)
    free = CommissionSchedule(0.0, 0.0)
    for _ in range(200):
        m = int(rng.integers(1, 10))
        state = PortfolioState(_simplex(rng, m + 1), float(rng.uniform(0.5, 2.0)))
        ones = np.ones(m + 1)
        nxt = step_value(state, ones, _simplex(rng, m + 1), free).state
        assert abs(nxt.value - state.value) <= 1e-12


def test_trade_volumes_balance_cash():
    fees = CommissionSchedule(0.0, 0.0)
    wd = np.array([0.2, 0.5, 0.3])
    wt = np.array([0.1, 0.2, 0.7])
    sold, bought = trade_volumes(wd, wt, transaction_factor(wd, wt, fees))
    assert sold == pytest.approx(0.3) and bought == pytest.approx(0.4)


def test_episode_reward_mean():
    assert episode_reward([0.1, -0.2, 0.4]) == pytest.approx(0.1)
    with pytest.raises(PortfolioError):
        episode_reward([])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**32 - 1), st.floats(0.0, 0.1), st.floats(0.0, 0.1))
def test_mu_properties(m, seed, cs, cb):
    rng = np.random.default_rng(seed)
    wd, wt = _simplex(rng, m + 1), _simplex(rng, m + 1)
    fees = CommissionSchedule(cs, cb)
    mu = transaction_factor(wd, wt, fees)
    assert 0 < mu <= 1
    # the cost of a rebalance never exceeds the buy-and-sell of everything
    assert mu >= (1 - cs) * (1 - cb) - 1e-12
    assert abs(mu - mu_bisection(wd, wt, cs, cb)) < 1e-10


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_growth_of_unit_relatives_is_one(m, seed):
    w = _simplex(np.random.default_rng(seed), m + 1)
    assert growth(np.ones(m + 1), w) == 1.0
