import numpy as np
import pytest

from qswitch.errors import StepTooLarge
from qswitch.matrix_analysis import hurwitz_certificate
from qswitch.mdp_core import BehaviorPolicy, TabularMdp, iid_distribution, optimal_q
from qswitch.switching_system import (
    apply_tq,
    build_a_b,
    build_tq,
    greedy_selector,
    inf_norm,
    noise_bound,
    noise_second_moment_bound,
    sample_noise,
)

from conftest import make_random_problem
from oracles import greedy_loop, random_mdp_arrays, tq_loop


def test_greedy_selector_examples():
    sel = greedy_selector(np.zeros(6), 3, 2)
    assert list(sel.chosen_action) == [0, 0, 0]
    q = np.array([0.0, 0.0, 1.0, 1.0])  # q(s, a) = a
    sel = greedy_selector(q, 2, 2)
    assert list(sel.chosen_action) == [1, 1]
    np.testing.assert_array_equal(sel.matrix() @ q, [1.0, 1.0])
    assert (sel.matrix().sum(axis=1) == 1).all()


def test_greedy_selector_random_against_loop():
    rng = np.random.default_rng(0)
    for _ in range(100):
        ns, na = rng.integers(1, 6, size=2)
        q = rng.integers(-2, 3, size=ns * na).astype(float)  # many ties
        sel = greedy_selector(q, ns, na)
        assert list(sel.chosen_action) == greedy_loop(q, ns, na)
        np.testing.assert_array_equal(sel.apply(q), q.reshape(na, ns).max(axis=0))


def test_tq_small_examples():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.zeros((1, 1)), 0.5)
    dist = iid_distribution([1.0], BehaviorPolicy.uniform(1, 1))
    np.testing.assert_allclose(build_tq(mdp, dist, greedy_selector([0.0], 1, 1)), [[-0.5]])
    mdp, dist = make_random_problem(1, 3, 2, 1e-9)
    t = build_tq(mdp, dist, greedy_selector(np.zeros(6), 3, 2))
    np.testing.assert_allclose(t, -np.diag(dist.mass), atol=1e-9)


def test_tq_matches_index_oracle_and_margins():
    rng = np.random.default_rng(1)
    for seed in range(30):
        mdp, dist = make_random_problem(seed, 4, 3, 0.9)
        q = rng.normal(size=mdp.n)
        sel = greedy_selector(q, 4, 3)
        t = build_tq(mdp, dist, sel)
        oracle = tq_loop(mdp.transition, 0.9, dist.table(), greedy_loop(q, 4, 3))
        np.testing.assert_allclose(t, oracle, atol=1e-15)
        cert = hurwitz_certificate(t)
        np.testing.assert_allclose(cert.dominance_margins, (1 - 0.9) * dist.mass, atol=1e-12)
        assert inf_norm(t) <= 2 * dist.d_max
        x = rng.normal(size=(5, mdp.n))
        np.testing.assert_allclose(apply_tq(mdp, dist, sel.columns, x), x @ t.T, atol=1e-14)


def test_a_norm_example_and_guard():
    p, r = random_mdp_arrays(np.random.default_rng(2), 2, 2)
    mdp = TabularMdp(p, r, 0.9)
    dist = iid_distribution([0.5, 0.5], BehaviorPolicy.uniform(2, 2))
    qs = optimal_q(mdp)
    star = greedy_selector(qs, 2, 2)
    q = np.random.default_rng(3).normal(size=4)
    sel = greedy_selector(q, 2, 2)
    ops = build_a_b(build_tq(mdp, dist, sel), sel, star, qs, 0.1, mdp, dist)
    assert inf_norm(ops.a_qk) == pytest.approx(0.9975, abs=1e-12)
    with pytest.raises(StepTooLarge):
        build_a_b(build_tq(mdp, dist, sel), sel, star, qs, 50.0, mdp, dist)


def test_b_vanishes_at_q_star_and_is_nonpositive():
    mdp, dist = make_random_problem(4, 4, 3, 0.8)
    qs = optimal_q(mdp)
    star = greedy_selector(qs, 4, 3)
    ops = build_a_b(build_tq(mdp, dist, star), star, star, qs, 0.5, mdp, dist)
    assert np.all(ops.b_qk == 0)
    assert np.all(ops.b_diff == 0)
    rng = np.random.default_rng(4)
    for _ in range(200):
        sel = greedy_selector(rng.normal(size=mdp.n), 4, 3)
        ops = build_a_b(build_tq(mdp, dist, sel), sel, star, qs, 0.5, mdp, dist)
        assert np.max(ops.b_qk) <= 1e-12
        np.testing.assert_allclose(ops.b_diff @ qs, ops.b_qk, atol=1e-14)


def test_a_norm_identity_and_nonnegativity_random():
    rng = np.random.default_rng(5)
    for seed in range(50):
        mdp, dist = make_random_problem(200 + seed, 3, 3, 0.8)
        qs = optimal_q(mdp)
        star = greedy_selector(qs, 3, 3)
        sel = greedy_selector(rng.normal(size=mdp.n), 3, 3)
        alpha = rng.uniform(0, 1 / dist.d_max)
        ops = build_a_b(build_tq(mdp, dist, sel), sel, star, qs, alpha, mdp, dist)
        assert abs(inf_norm(ops.a_qk) - (1 - alpha * dist.d_min * 0.2)) <= 1e-12
        assert ops.a_qk.min() >= 0


def test_noise_zero_at_fixed_point():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5)
    dist = iid_distribution([1.0], BehaviorPolicy.uniform(1, 1))
    rec = sample_noise(mdp, dist, optimal_q(mdp), (0, 0, 0, 1.0))
    assert np.all(rec.w == 0)


def test_noise_entrywise_formula():
    p, _ = random_mdp_arrays(np.random.default_rng(6), 2, 2)
    mdp = TabularMdp(p, np.ones((2, 2)), 0.9)
    dist = iid_distribution([0.5, 0.5], BehaviorPolicy.uniform(2, 2))
    rec = sample_noise(mdp, dist, np.zeros(4), (1, 0, 0, 1.0))
    expected = -0.25 * np.ones(4)
    expected[1] += 1.0
    np.testing.assert_allclose(rec.w, expected)
    assert np.count_nonzero(rec.delta) == 1


def test_noise_zero_mean_and_moments():
    mdp, dist = make_random_problem(7, 3, 2, 0.8)
    rng = np.random.default_rng(7)
    q = rng.uniform(-1, 1, mdp.n) * 4
    n = 20000
    pairs = rng.choice(mdp.n, size=n, p=dist.mass)
    ws = np.empty((n, mdp.n))
    for j, i in enumerate(pairs):
        s, a = i % 3, i // 3
        s2 = rng.choice(3, p=mdp.transition[s, a])
        ws[j] = sample_noise(mdp, dist, q, (s, a, s2, mdp.reward[s, a])).w
    assert np.max(np.abs(ws)) <= noise_bound(0.8)
    mean, std = ws.mean(axis=0), ws.std(axis=0)
    assert np.max(np.abs(mean)) <= 5 * std.max() / np.sqrt(n)
    sq = (ws ** 2).sum(axis=1)
    assert sq.mean() <= noise_second_moment_bound(0.8) + 3 * sq.std() / np.sqrt(n)
