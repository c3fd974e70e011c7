import numpy as np
import pytest

from qswitch.bound_envelopes import ProblemConstants, envelope_lower_z
from qswitch.comparison_simulator import (
    CoupledState,
    crossing_term,
    initial_state,
    log_schedule,
    prepare_problem,
    run_ensemble,
    run_trajectory,
    simulate_batch,
    step_coupled,
)
from qswitch.errors import InvalidInput
from qswitch.generators import REFERENCE_SPECS, generate
from qswitch.mdp_core import BehaviorPolicy, TabularMdp
from qswitch.switching_system import build_a_b, build_tq, greedy_selector, sample_noise

from oracles import random_mdp_arrays, tabular_q_learning


@pytest.fixture(scope="module")
def chain():
    return prepare_problem(generate(REFERENCE_SPECS["chain-2x2"]))


@pytest.fixture(scope="module")
def dense():
    return prepare_problem(generate(REFERENCE_SPECS["dense-5x3"]))


def test_fixed_point_stays_put():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5)
    pr = prepare_problem(mdp)
    st = initial_state(pr, q0=pr.q_star)
    for _ in range(50):
        st, diag = step_coupled(st, (0, 0, 0, 1.0), pr)
        assert np.all(diag.w == 0)
    np.testing.assert_array_equal(st.q, pr.q_star)
    np.testing.assert_array_equal(st.q_lower, pr.q_star)
    np.testing.assert_array_equal(st.q_upper, pr.q_star)
    assert np.all(st.z == 0)


def test_single_step_coupling_identities(dense):
    mdp = dense.mdp
    rng = np.random.default_rng(0)
    q0 = rng.uniform(-1, 1, mdp.n)
    st = initial_state(dense, q0=q0)
    s, a = 2, 1
    s2 = 4
    new, _ = step_coupled(st, (s, a, s2, mdp.reward[s, a]), dense)
    alpha = dense.plan.alpha(0)
    sel = greedy_selector(q0, mdp.num_states, mdp.num_actions)
    star = greedy_selector(dense.q_star, mdp.num_states, mdp.num_actions)
    ops = build_a_b(build_tq(mdp, dense.dist, sel), sel, star, dense.q_star, alpha, mdp, dense.dist)
    ops_star = build_a_b(build_tq(mdp, dense.dist, star), star, star, dense.q_star, alpha, mdp, dense.dist)
    np.testing.assert_allclose(new.q_upper - new.q, -ops.b_qk, atol=1e-13)
    assert np.all(new.q_upper - new.q >= -1e-13)
    e0 = q0 - dense.q_star
    np.testing.assert_allclose(new.q - new.q_lower, (ops.a_qk - ops_star.a_qk) @ e0 + ops.b_qk, atol=1e-13)
    same, _ = step_coupled(initial_state(dense, q0=dense.q_star), (s, a, s2, mdp.reward[s, a]), dense)
    np.testing.assert_allclose(same.q, same.q_lower, atol=1e-14)
    np.testing.assert_allclose(same.q, same.q_upper, atol=1e-14)


def test_steps_match_tabular_and_dense_matrix_routes(dense):
    """Tabular oracle for Q, explicit matrices for the comparison systems and z."""
    mdp, qs = dense.mdp, dense.q_star
    ns, na = mdp.num_states, mdp.num_actions
    rng = np.random.default_rng(1)
    samples = []
    for _ in range(400):
        i = rng.choice(mdp.n, p=dense.dist.mass)
        s, a = i % ns, i // ns
        samples.append((s, a, rng.choice(ns, p=mdp.transition[s, a])))
    alphas = [float(dense.plan.alpha(k)) for k in range(len(samples))]
    hist = tabular_q_learning(mdp.transition, mdp.reward, mdp.discount, samples, alphas, np.zeros(mdp.n))

    st = initial_state(dense)
    el = eu = -qs
    z = dense.lyap.g_half @ (-qs)
    star = greedy_selector(qs, ns, na)
    for k, (s, a, s2) in enumerate(samples):
        q = st.q
        w = sample_noise(mdp, dense.dist, q, (s, a, s2, mdp.reward[s, a])).w
        sel = greedy_selector(q, ns, na)
        ops = build_a_b(build_tq(mdp, dense.dist, sel), sel, star, qs, alphas[k], mdp, dense.dist)
        ops_star = build_a_b(build_tq(mdp, dense.dist, star), star, star, qs, alphas[k], mdp, dense.dist)
        x = np.eye(mdp.n) + alphas[k] * dense.lyap.b
        cross = crossing_term(st, w, dense)
        assert cross == pytest.approx(z @ x.T @ dense.lyap.g_half @ w, rel=1e-9, abs=1e-12)
        el = ops_star.a_qk @ el + alphas[k] * w
        eu = ops.a_qk @ eu + alphas[k] * w
        z = x @ z + alphas[k] * dense.lyap.g_half @ w
        st, diag = step_coupled(st, (s, a, s2, mdp.reward[s, a]), dense)
        assert diag.identity_error <= 1e-12
        np.testing.assert_allclose(st.q, hist[k + 1], atol=1e-12)
        np.testing.assert_allclose(st.q_lower - qs, el, atol=1e-11)
        np.testing.assert_allclose(st.q_upper - qs, eu, atol=1e-11)
        np.testing.assert_allclose(st.z, z, atol=1e-9)
        np.testing.assert_allclose(dense.lyap.g_inv_half @ st.z, st.q_lower - qs, atol=1e-9)


def test_sandwich_many_seeds(dense):
    log = simulate_batch(dense, range(100), 3000, strict=True)
    assert log.checks["min_sandwich_margin"] >= -1e-10
    assert log.checks["max_identity_error"] <= 1e-12
    assert log.checks["max_q_inf"] <= 1 / (1 - dense.mdp.discount)


def test_initial_ordering_enforced(chain):
    with pytest.raises(InvalidInput):
        initial_state(chain, q0=np.zeros(4), q_lower0=np.ones(4))


def test_log_schedule():
    assert list(log_schedule(0)) == [0]
    ks = log_schedule(10 ** 5)
    assert ks[0] == 0 and ks[1] == 1 and ks[-1] == 10 ** 5
    assert np.all(np.diff(ks) > 0)
    assert np.all(ks[5:-1][1:] <= np.ceil(ks[5:-1][:-1] * 1.25))


def test_horizon_zero(chain):
    log = run_trajectory(chain, 0, seed=1)
    assert list(log.ks) == [0]
    assert log.err_inf[0] == pytest.approx(np.max(np.abs(chain.q_star)))


def test_myopic_problem_is_learned():
    p, r = random_mdp_arrays(np.random.default_rng(2), 2, 2)
    pr = prepare_problem(TabularMdp(p, r, 1e-9))
    log = run_trajectory(pr, 10 ** 4, seed=3)
    assert log.err_inf[-1] < 1e-2


def test_determinism_and_batch_independence(dense):
    a = run_trajectory(dense, 2000, seed=7)
    b = run_trajectory(dense, 2000, seed=7)
    for m in ("err_inf", "lower_err", "upper_err", "vz", "crossing"):
        np.testing.assert_array_equal(getattr(a, m), getattr(b, m))
    batch = simulate_batch(dense, [5, 7, 9], 2000)
    np.testing.assert_allclose(batch.err_inf[1], a.err_inf, atol=1e-12)
    np.testing.assert_allclose(batch.vz[1], a.vz, rtol=1e-9, atol=1e-12)


def test_duplicate_seeds_have_zero_se(chain):
    ens = run_ensemble(chain, 2, 0, 500, seeds=[4, 4])
    assert np.all(ens.se["err_inf"] == 0)
    with pytest.raises(InvalidInput):
        run_ensemble(chain, 1, 0, 10)


def test_ensemble_trend_and_vz_rate(chain):
    ens = run_ensemble(chain, 40, 100, 10 ** 5)
    xi = chain.plan.xi
    late = ens.ks >= 10 * xi
    coarse = ens.mean["err_inf"][late][::5]
    assert np.all(np.diff(coarse) < 0)
    window = (ens.ks >= 100) & (ens.ks <= 10 ** 5)
    scaled = ens.mean["vz"][window] * (ens.ks[window] + xi)
    env = envelope_lower_z(ProblemConstants.from_problem(chain))
    assert scaled.max() <= env.constants["coefficient"]
    assert scaled.max() / scaled.min() < 10


def test_crossing_term_zero_cases(chain):
    st = initial_state(chain, q0=chain.q_star)
    assert crossing_term(st, np.ones(chain.mdp.n), chain) == 0.0
    st = CoupledState(np.zeros(4), chain.q_star.copy(), np.ones(4) * 5, np.zeros(4), 3)
    assert crossing_term(st, np.ones(4), chain) == 0.0


def test_crossing_term_mean_under_stationary_start():
    mdp = generate(REFERENCE_SPECS["chain-2x2"])
    pol = BehaviorPolicy.uniform(2, 2)
    pr = prepare_problem(mdp, pol, "markov")
    mu_states = pr.dist.table().sum(axis=1)
    pr = prepare_problem(mdp, pol, "markov", initial_state_dist=mu_states)
    log = simulate_batch(pr, range(40), 10 ** 5)
    means = log.crossing_mean
    assert abs(means.mean()) <= 3 * means.std(ddof=1) / np.sqrt(means.size)
    assert log.checks["max_abs_crossing"] > 0
