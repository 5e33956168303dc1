import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from privae.accountant import (
    Ledger,
    compose_sequential,
    epsilon_for_sigma,
    sigma_for_budget,
    termwise_budget,
)
from privae.dp import kappa


def test_sigma_example():
    sigma = sigma_for_budget(3.393, 1e-5, 0.01, 10_000)
    assert sigma == pytest.approx(0.01 * math.sqrt(1e4 * math.log(1e5)) / 3.393, rel=1e-15)
    assert sigma == pytest.approx(1.000, abs=1e-3)


def test_sigma_scaling():
    base = sigma_for_budget(2.0, 1e-5, 0.01, 1000)
    assert sigma_for_budget(2.0, 1e-5, 0.01, 4000) == pytest.approx(2 * base, rel=1e-15)
    assert sigma_for_budget(2.0, 1e-5, 0.02, 1000) == pytest.approx(2 * base, rel=1e-15)


def test_epsilon_examples():
    assert epsilon_for_sigma(sigma_for_budget(3.393, 1e-5, 0.01, 10_000), 1e-5, 0.01, 10_000) == pytest.approx(3.393, abs=1e-3)
    assert epsilon_for_sigma(1e6, 1e-5, 0.01, 10_000) < 1e-4


GRID = list(itertools.product([0.1, 1.0, 8.0], [1e-3, 1e-5, 1e-9], [0.001, 0.05, 0.5], [1, 100, 10_000]))


@pytest.mark.parametrize("eps,delta,q,T", GRID)
def test_round_trip(eps, delta, q, T):
    sigma = sigma_for_budget(eps, delta, q, T)
    assert epsilon_for_sigma(sigma, delta, q, T) == pytest.approx(eps, rel=1e-12)


@pytest.mark.parametrize("delta,q,T", list(itertools.product([1e-3, 1e-5], [0.01, 0.5], [1, 50, 5000])))
def test_monotonicity(delta, q, T):
    sigmas = [0.25, 0.5, 1.0, 2.0, 4.0]
    eps = [epsilon_for_sigma(s, delta, q, T) for s in sigmas]
    assert all(a > b for a, b in zip(eps, eps[1:]))
    assert epsilon_for_sigma(1.0, delta, q, T) > epsilon_for_sigma(2.0, delta, q, T)
    assert epsilon_for_sigma(1.0, delta, min(1.0, 1.5 * q), T) > epsilon_for_sigma(1.0, delta, q, T)
    assert epsilon_for_sigma(1.0, delta, q, T + 1) > epsilon_for_sigma(1.0, delta, q, T)


def test_range_checks():
    with pytest.raises(ValueError):
        sigma_for_budget(0.0, 1e-5, 0.1, 10)
    with pytest.raises(ValueError):
        sigma_for_budget(1.0, 1.0, 0.1, 10)
    with pytest.raises(ValueError):
        sigma_for_budget(1.0, 1e-5, 1.5, 10)
    with pytest.raises(ValueError):
        epsilon_for_sigma(0.0, 1e-5, 0.1, 10)


def test_composition_examples():
    assert compose_sequential([(1.0, 1e-5)]) == (1.0, 1e-5)
    eps, dlt = compose_sequential([(1.0, 1e-5), (2.0, 1e-5)])
    assert eps == 3.0 and dlt == pytest.approx(2e-5, rel=1e-15)
    with pytest.raises(ValueError):
        compose_sequential([])


@given(eps=st.floats(0.01, 100), delta=st.floats(1e-12, 0.5), k=st.integers(1, 500))
def test_composition_telescopes(eps, delta, k):
    e, d = compose_sequential([(eps / k, delta / k)] * k)
    assert e == pytest.approx(eps, rel=1e-12) and d == pytest.approx(delta, rel=1e-12)


def test_kappa_identity_grid():
    for eps in np.geomspace(0.05, 20, 10):
        for delta in np.geomspace(1e-12, 0.1, 10):
            lhs = kappa(delta) * sigma_for_budget(eps, delta, 0.02, 500)
            rhs = sigma_for_budget(eps / 2, delta / 2, 0.02, 500)
            assert lhs == pytest.approx(rhs, rel=1e-12)


def test_termwise_budget_inactive_branch():
    sigma_prime, budget = termwise_budget(2.0, 1e-5, 0.05, 400, batch_branch=False)
    assert sigma_prime == sigma_for_budget(2.0, 1e-5, 0.05, 400)
    assert budget.mechanisms == [(2.0, 1e-5)]


def test_termwise_budget_active_branch():
    sigma_prime, budget = termwise_budget(2.0, 1e-5, 0.05, 400)
    assert sigma_prime / budget.sigma_eps == pytest.approx(2.0593, abs=1e-4)
    assert budget.composed() == (2.0, 1e-5)


@given(eps=st.floats(0.01, 50), delta=st.floats(1e-12, 0.5))
def test_termwise_split_sums_exactly(eps, delta):
    _, budget = termwise_budget(eps, delta, 0.1, 10)
    assert budget.composed() == (eps, delta)


def test_ledger_matches_closed_form_and_is_monotone():
    led = Ledger(1.7, 1e-5, 0.05)
    spent = [led.step() for _ in range(50)]
    assert spent == [epsilon_for_sigma(1.7, 1e-5, 0.05, t) for t in range(1, 51)]
    assert all(a < b for a, b in zip(spent, spent[1:]))


def test_noiseless_ledger_reports_none():
    led = Ledger(0.0, 1e-5, 0.05)
    assert led.step() is None
