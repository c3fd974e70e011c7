import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qswitch.errors import InvalidInput, NotErgodic, ZeroMass
from qswitch.mdp_core import (
    BehaviorPolicy,
    TabularMdp,
    bellman_operator,
    chain_matrix,
    dumps_mdp,
    expected_update_map,
    iid_distribution,
    index,
    load_mdp,
    mdp_from_dict,
    optimal_q,
    stationary_distribution,
)

from oracles import bellman_loop, chain_loop, h_loop, power_iteration_stationary, random_mdp_arrays


def test_index_convention():
    assert index(0, 0, 3) == 0
    assert index(2, 0, 3) == 2
    assert index(0, 1, 3) == 3
    assert index(1, 2, 3) == 7


def test_rejects_bad_kernel_and_reward():
    p = np.array([[[0.5, 0.6]], [[1.0, 0.0]]])
    with pytest.raises(InvalidInput, match="sums"):
        TabularMdp(p, np.zeros((2, 1)), 0.9)
    p = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    with pytest.raises(InvalidInput, match="sup-norm"):
        TabularMdp(p, np.array([[1.5], [0.0]]), 0.9)
    with pytest.raises(InvalidInput, match="discount"):
        TabularMdp(p, np.zeros((2, 1)), 1.0)
    # the unsafe flag skips only the reward check
    TabularMdp(p, np.array([[1.5], [0.0]]), 0.9, unsafe=True)


def test_stationary_single_state():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5)
    dist = stationary_distribution(mdp, BehaviorPolicy.uniform(1, 1))
    np.testing.assert_allclose(dist.mass, [1.0])


def test_stationary_symmetric_chain_is_uniform():
    p = np.zeros((2, 2, 2))
    for a in range(2):
        p[:, a] = [[0.7, 0.3], [0.3, 0.7]]
    mdp = TabularMdp(p, np.zeros((2, 2)), 0.5)
    dist = stationary_distribution(mdp, BehaviorPolicy.uniform(2, 2))
    np.testing.assert_allclose(dist.mass, 0.25, atol=1e-12)


def test_stationary_matches_power_iteration():
    rng = np.random.default_rng(5)
    p, r = random_mdp_arrays(rng, 5, 3)
    mdp = TabularMdp(p, r, 0.8)
    pol = BehaviorPolicy.uniform(5, 3)
    mu = stationary_distribution(mdp, pol).mass
    oracle = power_iteration_stationary(chain_loop(p, pol.beta))
    np.testing.assert_allclose(mu, oracle, atol=1e-10)
    np.testing.assert_allclose(mu @ chain_matrix(mdp, pol), mu, atol=1e-10)


def test_not_ergodic_reducible_and_periodic():
    # two absorbing states
    p = np.zeros((2, 1, 2))
    p[0, 0, 0] = p[1, 0, 1] = 1.0
    with pytest.raises(NotErgodic):
        stationary_distribution(TabularMdp(p, np.zeros((2, 1)), 0.5), BehaviorPolicy.uniform(2, 1))
    # deterministic 2-cycle
    p = np.zeros((2, 1, 2))
    p[0, 0, 1] = p[1, 0, 0] = 1.0
    with pytest.raises(NotErgodic, match="period"):
        stationary_distribution(TabularMdp(p, np.zeros((2, 1)), 0.5), BehaviorPolicy.uniform(2, 1))


def test_aperiodic_without_self_loop():
    # cycles of length 2 and 3 through state 0: period gcd(2, 3) = 1
    p = np.zeros((3, 1, 3))
    p[0, 0, [1, 2]] = 0.5
    p[1, 0, 0] = 1.0
    p[2, 0, 1] = 1.0
    dist = stationary_distribution(TabularMdp(p, np.zeros((3, 1)), 0.5), BehaviorPolicy.uniform(3, 1))
    assert dist.d_min > 0


def test_iid_distribution_examples():
    pol = BehaviorPolicy.uniform(2, 2)
    d = iid_distribution([0.5, 0.5], pol)
    np.testing.assert_allclose(d.mass, 0.25)
    assert d.d_min == d.d_max == 0.25
    with pytest.raises(ZeroMass):
        iid_distribution([1.0, 0.0], pol)
    d = iid_distribution([0.6, 0.4], pol)
    np.testing.assert_allclose(d.mass, [0.3, 0.2, 0.3, 0.2], atol=1e-15)
    assert d.d_min == pytest.approx(0.2)
    np.testing.assert_allclose(d.table(), [[0.3, 0.3], [0.2, 0.2]])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 10 ** 6))
def test_iid_mass_sums_to_one(ns, na, seed):
    rng = np.random.default_rng(seed)
    pol = BehaviorPolicy(rng.dirichlet(np.ones(na), size=ns))
    d = iid_distribution(rng.dirichlet(np.ones(ns)), pol)
    assert abs(d.mass.sum() - 1) <= 1e-12


def test_optimal_q_geometric_series():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5)
    np.testing.assert_allclose(optimal_q(mdp), [2.0], atol=1e-12)


def test_optimal_q_myopic():
    rng = np.random.default_rng(1)
    p, r = random_mdp_arrays(rng, 3, 2)
    q = optimal_q(TabularMdp(p, r, 1e-9))
    np.testing.assert_allclose(q, r.T.reshape(-1), atol=1e-8)


def test_optimal_q_residual_and_loop_oracle():
    rng = np.random.default_rng(2)
    p, r = random_mdp_arrays(rng, 3, 2)
    mdp = TabularMdp(p, r, 0.8)
    q = optimal_q(mdp)
    assert np.max(np.abs(bellman_loop(p, r, 0.8, q) - q)) <= 1e-12
    np.testing.assert_allclose(bellman_operator(mdp, q), bellman_loop(p, r, 0.8, q), atol=1e-14)


def test_bellman_contraction_random_pairs():
    rng = np.random.default_rng(3)
    p, r = random_mdp_arrays(rng, 4, 3)
    mdp = TabularMdp(p, r, 0.9)
    for _ in range(100):
        q1, q2 = rng.normal(size=(2, 12)) * 5
        lhs = np.max(np.abs(bellman_operator(mdp, q1) - bellman_operator(mdp, q2)))
        assert lhs <= 0.9 * np.max(np.abs(q1 - q2)) + 1e-12


def test_optimal_q_independent_of_start():
    rng = np.random.default_rng(4)
    p, r = random_mdp_arrays(rng, 4, 3)
    mdp = TabularMdp(p, r, 0.9)
    tol = 1e-10
    ref = optimal_q(mdp, tol)
    for _ in range(10):
        q = optimal_q(mdp, tol, q0=rng.normal(size=12) * 20)
        assert np.max(np.abs(q - ref)) <= 2 * tol


def test_expected_update_map():
    rng = np.random.default_rng(6)
    p, r = random_mdp_arrays(rng, 2, 2)
    mdp = TabularMdp(p, r, 0.7)
    d = iid_distribution([0.3, 0.7], BehaviorPolicy.uniform(2, 2))
    np.testing.assert_allclose(expected_update_map(mdp, d, optimal_q(mdp)), 0, atol=1e-10)
    q = rng.normal(size=4)
    np.testing.assert_allclose(expected_update_map(mdp, d, q), h_loop(p, r, 0.7, d.table(), q), atol=1e-14)
    myopic = TabularMdp(p, r, 1e-9)
    np.testing.assert_allclose(expected_update_map(myopic, d, r.T.reshape(-1)), 0, atol=1e-8)


def test_json_round_trip_and_validation(tmp_path):
    rng = np.random.default_rng(7)
    p, r = random_mdp_arrays(rng, 3, 2)
    mdp = TabularMdp(p, r, 0.8)
    text = dumps_mdp(mdp)
    path = tmp_path / "m.json"
    path.write_text(text)
    assert dumps_mdp(load_mdp(path)) == text

    data = json.loads(text)
    data["transition"][1][0][0] += 0.5
    with pytest.raises(InvalidInput, match=r"transition: row \(1, 0\)"):
        mdp_from_dict(data)
    data = json.loads(text)
    del data["discount"]
    with pytest.raises(InvalidInput, match="discount"):
        mdp_from_dict(data)
    with pytest.raises(InvalidInput):
        load_mdp(tmp_path / "missing.json")


def test_transition_dependent_rewards():
    rng = np.random.default_rng(8)
    p, _ = random_mdp_arrays(rng, 3, 2)
    rs = rng.uniform(-1, 1, size=(3, 2, 3))
    mdp = TabularMdp.from_transition_rewards(p, rs, 0.8)
    np.testing.assert_allclose(mdp.reward, (p * rs).sum(axis=2))
    assert dumps_mdp(mdp_from_dict(json.loads(dumps_mdp(mdp)))) == dumps_mdp(mdp)
