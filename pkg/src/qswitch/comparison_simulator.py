"""Q-learning coupled with its lower and upper comparison systems.

All three recursions, plus the transformed lower error ``z``, are driven by
one shared noise realization.  Runs are vectorized along a leading batch
axis; each run owns its random streams, so a run's trajectory does not
depend on which batch it was computed in.

Random streams: run ``i`` of an ensemble uses seed ``base_seed + i``.
``SeedSequence(seed).spawn(2)`` yields two Philox streams, stream 0 for
the state-action sampler (pair draws in the i.i.d. model, initial state
and behavior actions in the Markovian model) and stream 1 for next-state
draws.  Uniforms are drawn in fixed blocks of ``BLOCK`` per stream.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, SandwichViolated
from .mdp_core import (
    BehaviorPolicy,
    StateActionDistribution,
    TabularMdp,
    chain_matrix,
    check_ergodic,
    iid_distribution,
    optimal_q,
    stationary_distribution,
)
from .stepsize_design import LyapunovAnalysis, StepSizePlan, analyze_lyapunov, design_stepsize
from .switching_system import greedy_selector

BLOCK = 1024
SANDWICH_TOL = 1e-10
IDENTITY_TOL = 1e-12
Z_CONSISTENCY_TOL = 1e-9
FULL_LOG_LIMIT = 50_000_000


@dataclass(frozen=True, eq=False)
class CoupledProblem:
    """Everything a simulation needs, computed once and shared read-only.

    ``dist`` is the weighting in ``h(Q)``: the sampling distribution for
    the i.i.d. model, the stationary distribution for the Markovian one.
    """

    mdp: TabularMdp
    policy: BehaviorPolicy
    model: str
    dist: StateActionDistribution
    q_star: np.ndarray
    lyap: LyapunovAnalysis
    plan: StepSizePlan
    initial_state_dist: np.ndarray | None = None

    @property
    def star_columns(self) -> np.ndarray:
        return greedy_selector(self.q_star, self.mdp.num_states, self.mdp.num_actions).columns


def prepare_problem(mdp: TabularMdp, policy: BehaviorPolicy | None = None, model: str = "iid",
                    state_dist=None, initial_state_dist=None, xi: float | None = None,
                    enforce_guard: bool = True) -> CoupledProblem:
    """Build the shared context.

    For the i.i.d. model ``state_dist`` defaults to uniform.  For the
    Markovian model ``initial_state_dist`` defaults to a point mass on
    state 0.
    """
    policy = policy or BehaviorPolicy.uniform(mdp.num_states, mdp.num_actions)
    if model == "iid":
        p = np.full(mdp.num_states, 1.0 / mdp.num_states) if state_dist is None else state_dist
        dist = iid_distribution(p, policy)
        mu0 = None
    elif model == "markov":
        dist = stationary_distribution(mdp, policy)
        mu0 = np.eye(mdp.num_states)[0] if initial_state_dist is None else np.asarray(initial_state_dist, float)
        if mu0.shape != (mdp.num_states,) or np.any(mu0 < 0) or abs(mu0.sum() - 1) > 1e-12:
            raise InvalidInput("initial state distribution must be a probability vector over states")
    else:
        raise InvalidInput(f"model must be 'iid' or 'markov', got {model!r}")
    q_star = optimal_q(mdp)
    lyap = analyze_lyapunov(mdp, dist, q_star)
    plan = design_stepsize(lyap, dist, mdp.discount, xi=xi, enforce_guard=enforce_guard)
    return CoupledProblem(mdp, policy, model, dist, q_star, lyap, plan, mu0)


@dataclass
class CoupledState:
    """Iterates of one run (or a batch of runs along axis 0)."""

    q: np.ndarray
    q_lower: np.ndarray
    q_upper: np.ndarray
    z: np.ndarray
    k: int = 0


def initial_state(problem: CoupledProblem, q0=None, q_lower0=None, q_upper0=None) -> CoupledState:
    n = problem.mdp.n
    q = np.zeros(n) if q0 is None else np.array(q0, dtype=float)
    ql = q.copy() if q_lower0 is None else np.array(q_lower0, dtype=float)
    qu = q.copy() if q_upper0 is None else np.array(q_upper0, dtype=float)
    if np.any(ql > q) or np.any(q > qu):
        raise InvalidInput("initial iterates must satisfy q_lower <= q <= q_upper")
    return CoupledState(q, ql, qu, (ql - problem.q_star) @ problem.lyap.g_half)


@dataclass
class StepDiagnostics:
    w: np.ndarray
    crossing: np.ndarray
    identity_error: np.ndarray
    sandwich_margin: np.ndarray


def _greedy_columns(q: np.ndarray, num_states: int) -> tuple[np.ndarray, np.ndarray]:
    qa = q.reshape(q.shape[:-1] + (-1, num_states))
    act = np.argmax(qa, axis=-2)
    return act * num_states + np.arange(num_states), np.take_along_axis(qa, act[..., None, :], axis=-2)[..., 0, :]


def _advance(problem: CoupledProblem, state: CoupledState, s, a, s_next, r):
    """One coupled step for a batch; returns the new state and diagnostics."""
    mdp, d = problem.mdp, problem.dist.mass
    ns, gamma = mdp.num_states, mdp.discount
    pmat_t = mdp.transition_matrix().T
    q_star, g_half, bmat = problem.q_star, problem.lyap.g_half, problem.lyap.b
    alpha = float(problem.plan.alpha(state.k))
    q, ql, qu, z = state.q, state.q_lower, state.q_upper, state.z
    rows = np.arange(q.shape[0])
    idx = a * ns + s

    cols, qmax = _greedy_columns(q, ns)
    td = r + gamma * qmax[rows, s_next] - q[rows, idx]
    h = d * (mdp.reward_vector() + gamma * qmax @ pmat_t - q)
    w = -h
    w[rows, idx] += td

    q_new = q.copy()
    q_new[rows, idx] += alpha * td

    e = q - q_star
    e_l = ql - q_star
    e_u = qu - q_star
    star = problem.star_columns

    def t_apply(columns, x):
        picked = x[..., columns] if columns.ndim == 1 else np.take_along_axis(x, columns, axis=-1)
        return d * (gamma * picked @ pmat_t - x)

    b_vec = alpha * gamma * d * ((np.take_along_axis(np.broadcast_to(q_star, q.shape), cols, axis=-1)
                                  - q_star[star]) @ pmat_t)
    e_matrix_form = e + alpha * t_apply(cols, e) + b_vec + alpha * w
    identity_error = np.max(np.abs(e_matrix_form - (q_new - q_star)), axis=-1)

    e_l_new = e_l + alpha * (t_apply(star, e_l) + w)
    e_u_new = e_u + alpha * (t_apply(cols, e_u) + w)

    xz = z + alpha * z @ bmat.T
    gw = w @ g_half
    crossing = np.sum(xz * gw, axis=-1)
    z_new = xz + alpha * gw

    e_new = q_new - q_star
    margin = np.minimum(np.min(e_new - e_l_new, axis=-1), np.min(e_u_new - e_new, axis=-1))
    new_state = CoupledState(q_new, e_l_new + q_star, e_u_new + q_star, z_new, state.k + 1)
    return new_state, StepDiagnostics(w, crossing, identity_error, margin)


def step_coupled(state: CoupledState, sample, problem: CoupledProblem, strict: bool = True):
    """Advance one run by one observed transition ``(s, a, s', r)``.

    Returns ``(new_state, diagnostics)``.  With ``strict`` a broken
    ordering of the three iterates raises ``SandwichViolated``.
    """
    s, a, s_next, r = sample
    batch = CoupledState(state.q[None], state.q_lower[None], state.q_upper[None], state.z[None], state.k)
    new, diag = _advance(problem, batch, np.array([s]), np.array([a]), np.array([s_next]), np.array([float(r)]))
    if strict and diag.sandwich_margin[0] < -SANDWICH_TOL:
        raise SandwichViolated(f"ordering broken by {-diag.sandwich_margin[0]:.3e} at k={state.k}")
    out = CoupledState(new.q[0], new.q_lower[0], new.q_upper[0], new.z[0], new.k)
    return out, StepDiagnostics(diag.w[0], diag.crossing[0], diag.identity_error[0], diag.sandwich_margin[0])


def crossing_term(state: CoupledState, w, problem: CoupledProblem) -> float:
    """``z^T X_k^T G^{1/2} w`` for the current step."""
    alpha = float(problem.plan.alpha(state.k))
    xz = state.z + alpha * problem.lyap.b @ state.z
    return float(xz @ problem.lyap.g_half @ np.asarray(w))


def log_schedule(horizon: int, ratio: float = 1.25) -> np.ndarray:
    """``0, 1`` and then geometric spacing, always ending at ``horizon``."""
    if horizon < 0:
        raise InvalidInput("horizon must be nonnegative")
    ks = [0]
    k = 1
    while k < horizon:
        ks.append(k)
        k = max(k + 1, int(np.ceil(k * ratio)))
    if horizon > 0:
        ks.append(horizon)
    return np.array(ks, dtype=np.int64)


class _Sampler:
    """Per-run uniform streams consumed in fixed-size blocks."""

    def __init__(self, problem: CoupledProblem, seeds):
        self.problem = problem
        self.streams = []
        for seed in seeds:
            children = np.random.SeedSequence(int(seed)).spawn(2)
            self.streams.append([np.random.Generator(np.random.Philox(c)) for c in children])
        mdp = problem.mdp
        self.pair_cdf = np.cumsum(problem.dist.mass)
        self.next_cdf = np.cumsum(mdp.transition_matrix(), axis=1)
        self.action_cdf = np.cumsum(problem.policy.beta, axis=1)
        self.pos = BLOCK
        if problem.model == "markov":
            u0 = np.array([st[0].random() for st in self.streams])
            self.current = np.minimum(np.searchsorted(np.cumsum(problem.initial_state_dist), u0, side="right"),
                                      mdp.num_states - 1)

    def _refill(self):
        self.u_pair = np.stack([st[0].random(BLOCK) for st in self.streams])
        self.u_next = np.stack([st[1].random(BLOCK) for st in self.streams])
        self.pos = 0

    def draw(self):
        if self.pos == BLOCK:
            self._refill()
        up, un = self.u_pair[:, self.pos], self.u_next[:, self.pos]
        self.pos += 1
        mdp = self.problem.mdp
        ns = mdp.num_states
        if self.problem.model == "iid":
            idx = np.minimum(np.searchsorted(self.pair_cdf, up, side="right"), mdp.n - 1)
            s, a = idx % ns, idx // ns
        else:
            s = self.current
            a = np.minimum((up[:, None] >= self.action_cdf[s]).sum(axis=1), mdp.num_actions - 1)
        idx = a * ns + s
        s_next = np.minimum((un[:, None] >= self.next_cdf[idx]).sum(axis=1), ns - 1)
        if self.problem.model == "markov":
            self.current = s_next
        if mdp.reward_sas is not None:
            r = mdp.reward_sas[s, a, s_next]
        else:
            r = mdp.reward[s, a]
        return s, a, s_next, r


METRICS = ("err_inf", "lower_err", "upper_err", "diff_upper_lower", "vz", "crossing")


@dataclass
class TrajectoryLog:
    """Logged metrics, shape ``(runs, len(ks))`` or ``(len(ks),)`` for one run.

    ``crossing`` holds the crossing term of the step taken at each logged
    index (NaN at the final index).  ``checks`` records worst-case
    quantities over every simulated step.
    """

    ks: np.ndarray
    alpha: np.ndarray
    err_inf: np.ndarray
    lower_err: np.ndarray
    upper_err: np.ndarray
    diff_upper_lower: np.ndarray
    vz: np.ndarray
    crossing: np.ndarray
    seeds: list
    checks: dict = field(default_factory=dict)
    crossing_mean: np.ndarray | None = None


def simulate_batch(problem: CoupledProblem, seeds, horizon: int, schedule=None, full_log: bool = False,
                   strict: bool = True, initial: CoupledState | None = None) -> TrajectoryLog:
    """Run one trajectory per seed, vectorized across seeds."""
    if horizon < 0:
        raise InvalidInput("horizon must be nonnegative")
    seeds = [int(s) for s in seeds]
    runs = len(seeds)
    if runs < 1:
        raise InvalidInput("need at least one seed")
    if full_log:
        if (horizon + 1) * runs * len(METRICS) > FULL_LOG_LIMIT:
            raise InvalidInput("full logging would exceed the memory guard; use a log schedule")
        ks = np.arange(horizon + 1)
    else:
        ks = log_schedule(horizon) if schedule is None else np.asarray(schedule, dtype=np.int64)
    if ks.size and (np.any(np.diff(ks) <= 0) or ks[0] < 0 or ks[-1] > horizon):
        raise InvalidInput("log schedule must be strictly increasing within [0, horizon]")

    mdp, q_star = problem.mdp, problem.q_star
    init = initial or initial_state(problem)
    state = CoupledState(np.tile(init.q, (runs, 1)), np.tile(init.q_lower, (runs, 1)),
                         np.tile(init.q_upper, (runs, 1)), np.tile(init.z, (runs, 1)), 0)
    sampler = _Sampler(problem, seeds)
    out = {m: np.full((runs, ks.size), np.nan) for m in METRICS}
    worst = dict(max_q_inf=0.0, max_w_inf=0.0, max_lower_err_inf=0.0, max_z_inf=0.0,
                 max_abs_crossing=0.0, max_identity_error=0.0, min_sandwich_margin=np.inf,
                 max_z_consistency_error=0.0, steps=0, runs=runs)
    cross_sum = np.zeros(runs)
    g_inv_half = problem.lyap.g_inv_half

    def observe(st, j):
        e = st.q - q_star
        el = st.q_lower - q_star
        out["err_inf"][:, j] = np.max(np.abs(e), axis=1)
        out["lower_err"][:, j] = np.max(np.abs(el), axis=1)
        out["upper_err"][:, j] = np.max(np.abs(st.q_upper - q_star), axis=1)
        out["diff_upper_lower"][:, j] = np.max(np.abs(st.q_upper - st.q_lower), axis=1)
        out["vz"][:, j] = np.sum(st.z * st.z, axis=1)
        zc = np.max(np.abs(st.z @ g_inv_half - el))
        worst["max_z_consistency_error"] = max(worst["max_z_consistency_error"], float(zc))

    def track(st):
        worst["max_q_inf"] = max(worst["max_q_inf"], float(np.max(np.abs(st.q))))
        worst["max_lower_err_inf"] = max(worst["max_lower_err_inf"], float(np.max(np.abs(st.q_lower - q_star))))
        worst["max_z_inf"] = max(worst["max_z_inf"], float(np.max(np.abs(st.z))))

    track(state)
    j = 0
    for k in range(horizon + 1):
        if j < ks.size and ks[j] == k:
            observe(state, j)
            logged = j
            j += 1
        else:
            logged = None
        if k == horizon:
            break
        s, a, s_next, r = sampler.draw()
        state, diag = _advance(problem, state, s, a, s_next, r)
        track(state)
        worst["max_w_inf"] = max(worst["max_w_inf"], float(np.max(np.abs(diag.w))))
        worst["max_abs_crossing"] = max(worst["max_abs_crossing"], float(np.max(np.abs(diag.crossing))))
        worst["max_identity_error"] = max(worst["max_identity_error"], float(np.max(diag.identity_error)))
        m = float(np.min(diag.sandwich_margin))
        worst["min_sandwich_margin"] = min(worst["min_sandwich_margin"], m)
        if strict and m < -SANDWICH_TOL:
            raise SandwichViolated(f"ordering broken by {-m:.3e} at k={k}")
        cross_sum += diag.crossing
        if logged is not None:
            out["crossing"][:, logged] = diag.crossing
    worst["steps"] = horizon
    return TrajectoryLog(ks=ks, alpha=problem.plan.alpha(ks), seeds=seeds, checks=worst,
                         crossing_mean=cross_sum / max(horizon, 1), **out)


def run_trajectory(problem: CoupledProblem, horizon: int, seed: int, schedule=None, full_log: bool = False,
                   strict: bool = True) -> TrajectoryLog:
    log = simulate_batch(problem, [seed], horizon, schedule, full_log, strict)
    for m in METRICS:
        setattr(log, m, getattr(log, m)[0])
    log.crossing_mean = log.crossing_mean[0]
    return log


@dataclass
class EnsembleResult:
    num_runs: int
    ks: np.ndarray
    alpha: np.ndarray
    mean: dict
    se: dict
    seeds: list
    checks: dict


def summarize(log: TrajectoryLog) -> EnsembleResult:
    runs = len(log.seeds)
    mean, se = {}, {}
    for m in METRICS:
        vals = getattr(log, m)
        mean[m] = np.mean(vals, axis=0)
        se[m] = np.std(vals, axis=0, ddof=1) / np.sqrt(runs) if runs > 1 else np.zeros(vals.shape[1])
    return EnsembleResult(runs, log.ks, log.alpha, mean, se, list(log.seeds), dict(log.checks))


def run_ensemble(problem: CoupledProblem, num_runs: int, base_seed: int, horizon: int, schedule=None,
                 strict: bool = True, seeds=None, batch_size: int = 256) -> EnsembleResult:
    """Monte-Carlo ensemble; run ``i`` uses seed ``base_seed + i``.

    ``seeds`` overrides the seed list (used to force duplicate seeds in
    tests).  Runs are processed in vectorized batches.
    """
    if num_runs < 2:
        raise InvalidInput("an ensemble needs at least two runs")
    seeds = [base_seed + i for i in range(num_runs)] if seeds is None else list(seeds)
    if len(seeds) != num_runs:
        raise InvalidInput("seed list length must equal num_runs")
    logs = [simulate_batch(problem, seeds[i:i + batch_size], horizon, schedule, strict=strict)
            for i in range(0, num_runs, batch_size)]
    merged = logs[0]
    if len(logs) > 1:
        for m in METRICS:
            setattr(merged, m, np.concatenate([getattr(lg, m) for lg in logs]))
        merged.seeds = seeds
        for key in merged.checks:
            vals = [lg.checks[key] for lg in logs]
            merged.checks[key] = min(vals) if key.startswith("min") else (sum(vals) if key == "runs" else max(vals))
        merged.crossing_mean = np.concatenate([lg.crossing_mean for lg in logs])
    return summarize(merged)


def chain_is_ergodic(mdp: TabularMdp, policy: BehaviorPolicy) -> bool:
    try:
        check_ergodic(chain_matrix(mdp, policy))
    except Exception:
        return False
    return True
