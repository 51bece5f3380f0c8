import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irsa_eh.energy_chain import (
    ChainError,
    average_degree_distribution,
    battery_chain,
    slot_level_transition_matrix,
    spend_distribution,
    steady_state,
    steady_state_power,
    transition_matrix,
)
from irsa_eh.model import DegreeDistribution, SystemConfig, avoid_mask
from irsa_eh.sim import run_simulation
from irsa_eh.metrics import empirical_battery_distribution


def test_spend_sigma_zero():
    xi = spend_distribution(DegreeDistribution.battery_matched(3), 0.0, 3)
    np.testing.assert_array_equal(xi[:, 0], 1.0)


def test_spend_sigma_one():
    xi = spend_distribution(DegreeDistribution.battery_matched(3), 1.0, 3)
    np.testing.assert_array_equal(xi, np.eye(4))


def test_spend_monte_carlo():
    dist = DegreeDistribution([[1.0, 0.0], [0.2, 0.8]])
    xi = spend_distribution(dist, 0.5, 1)
    assert xi[1] == pytest.approx([0.6, 0.4])
    # oracle: activation then degree sampling
    rng = np.random.default_rng(3)
    n = 1_000_000
    active = rng.random(n) < 0.5
    spend = np.where(active, rng.random(n) < 0.8, 0)
    assert spend.mean() == pytest.approx(0.4, abs=3e-3)


def test_spend_rejects_mask_violation():
    with pytest.raises(ValueError):
        spend_distribution(DegreeDistribution([[0.5, 0.5]], adaptive=False), 0.5, 1)


def test_transition_no_harvest():
    c = SystemConfig(10, 10, 1.0, 3, 0.0, 3)
    P = transition_matrix(c, spend_distribution(DegreeDistribution.battery_matched(3), 1.0, 3))
    np.testing.assert_array_equal(P[:, 0], 1.0)


def test_transition_full_harvest():
    c = SystemConfig(10, 4, 0.3, 1, 1.0, 1)
    P = transition_matrix(c, spend_distribution(DegreeDistribution.battery_matched(1), c.sigma, 1))
    np.testing.assert_allclose(P[:, 1], 1.0)


E1M2 = SystemConfig(1, 2, 1.0, 1, 0.5, 1)


def _mc_chain(config, dist, frames, rng):
    # oracle: frame-level battery recursion, b' = min(E, b - spend + Bin(M, eta))
    E, M = config.battery_capacity, config.frame_length
    b = E
    counts = np.zeros((E + 1, E + 1))
    table = dist.expanded(E + 1)
    harvest = rng.binomial(M, config.harvest_prob, frames)
    act = rng.random(frames) < config.sigma
    u = rng.random(frames)
    for f in range(frames):
        spend = int(np.searchsorted(np.cumsum(table[b]), u[f], side="right")) if act[f] else 0
        nxt = min(E, b - spend + harvest[f])
        counts[b, nxt] += 1
        b = nxt
    return counts / counts.sum(axis=1, keepdims=True), counts.sum(axis=1) / frames


def test_transition_e1_m2():
    dist = DegreeDistribution.battery_matched(1)
    chain = battery_chain(E1M2, dist)
    expected = np.array([[0.25, 0.75], [0.25, 0.75]])
    np.testing.assert_allclose(chain.transition, expected, atol=1e-15)
    np.testing.assert_allclose(chain.steady_state, [0.25, 0.75], atol=1e-12)
    P_mc, phi_mc = _mc_chain(E1M2, dist, 200_000, np.random.default_rng(1))
    np.testing.assert_allclose(P_mc, expected, atol=5e-3)
    np.testing.assert_allclose(phi_mc, [0.25, 0.75], atol=5e-3)


def test_chain_matches_simulator_e1_m2():
    dist = DegreeDistribution.battery_matched(1)
    report = run_simulation(E1M2.replace(num_devices=200), dist, "avoid", 5000, 50, seed=2)
    phi = empirical_battery_distribution(report)
    assert np.abs(phi - battery_chain(E1M2, dist).steady_state).sum() < 0.01


def test_steady_state_no_harvest():
    c = SystemConfig(10, 10, 0.05, 3, 0.0, 3)
    phi = battery_chain(c, DegreeDistribution.battery_matched(3)).steady_state
    np.testing.assert_allclose(phi, [1, 0, 0, 0], atol=1e-12)


def test_identity_rejected():
    with pytest.raises(ChainError):
        steady_state(np.eye(3))


def test_nonstochastic_rejected():
    with pytest.raises(ChainError):
        steady_state(np.array([[0.5, 0.4], [0.5, 0.5]]))


def test_average_degree():
    dist = DegreeDistribution([[1.0, 0.0], [0.5, 0.5]])
    np.testing.assert_allclose(average_degree_distribution([0.3, 0.7], dist), [0.65, 0.35])
    nonad = DegreeDistribution.fixed(2, 3)
    np.testing.assert_allclose(average_degree_distribution([0.2, 0.3, 0.5], nonad), nonad.row(0))
    np.testing.assert_allclose(average_degree_distribution([1, 0], dist), dist.row(0))
    # oracle: sample b ~ phi then l ~ row b
    rng = np.random.default_rng(0)
    b = rng.random(1_000_000) < 0.7
    l = np.where(b, rng.random(1_000_000) < 0.5, 0)
    assert l.mean() == pytest.approx(0.35, abs=3e-3)


def _random_masked(rng, E, L):
    mask = avoid_mask(E + 1, L)
    t = rng.random((E + 1, L + 1)) * mask
    return DegreeDistribution(t / t.sum(axis=1, keepdims=True))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 6), st.integers(2, 30), st.floats(0.01, 1.0),
       st.one_of(st.just(0.0), st.floats(1e-4, 1.0)), st.integers(0, 2**31))
def test_chain_properties(E, M, alpha, eta, seed):
    L = min(E, M - 1)
    c = SystemConfig(10, M, alpha, E, eta, L)
    dist = _random_masked(np.random.default_rng(seed), E, L)
    spend = spend_distribution(dist, c.sigma, E)
    P = transition_matrix(c, spend)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert P.min() >= -1e-15
    try:
        phi = steady_state(P)
    except ChainError:
        # several closed classes can only arise without harvesting
        assert eta == 0.0 or E == 0
        return
    assert abs(phi.sum() - 1.0) < 1e-12
    assert np.abs(phi @ P - phi).sum() < 1e-10
    np.testing.assert_allclose(steady_state_power(P), phi, atol=1e-9)


def test_slot_level_matrix_is_stochastic_and_differs():
    c = E1M2
    dist = DegreeDistribution.battery_matched(1)
    P = slot_level_transition_matrix(c, dist)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    # a harvest in slot 1 at full battery is lost when pausing per slot
    assert P[1, 1] < battery_chain(c, dist).transition[1, 1]


def test_slot_level_matrix_matches_slot_cap_simulation():
    c = SystemConfig(300, 10, 0.05, 2, 0.15, 2)
    dist = DegreeDistribution.battery_matched(2)
    phi = steady_state(slot_level_transition_matrix(c, dist))
    report = run_simulation(c, dist, "avoid", 4000, 50, seed=4, energy_model="slot_cap")
    assert np.abs(empirical_battery_distribution(report) - phi).sum() < 0.01
