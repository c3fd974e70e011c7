"""Tabular MDPs, behavior policies, state-action distributions and Q*.

Every vector over state-action pairs uses the flat index
``index(s, a) = a * num_states + s``; pairs that share an action are
contiguous.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import InvalidInput, NotErgodic, ZeroMass

PROB_TOL = 1e-12


def index(s: int, a: int, num_states: int) -> int:
    return a * num_states + s


def _check_stochastic(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{what}: non-finite entry")
    if np.any(arr < 0):
        loc = tuple(int(i) for i in np.argwhere(arr < 0)[0])
        raise InvalidInput(f"{what}: negative probability at {loc}")
    sums = arr.sum(axis=-1)
    bad = np.abs(sums - 1.0) > PROB_TOL
    if np.any(bad):
        loc = tuple(int(i) for i in np.argwhere(bad)[0])
        raise InvalidInput(f"{what}: row {loc} sums to {sums[loc]!r}, not 1")


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with expected rewards ``reward[s, a]``.

    ``reward_sas`` optionally holds transition-dependent rewards
    ``r(s, a, s')``; ``reward`` must then equal their expectation.
    Passing ``unsafe=True`` skips the ``|r| <= 1`` check, in which case
    no envelope carries a guarantee.
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    reward_sas: np.ndarray | None = None
    unsafe: bool = False

    def __post_init__(self):
        p = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or p.shape[0] < 1 or p.shape[1] < 1:
            raise InvalidInput(f"transition: expected shape (S, A, S), got {p.shape}")
        if r.shape != p.shape[:2]:
            raise InvalidInput(f"reward: expected shape {p.shape[:2]}, got {r.shape}")
        _check_stochastic(p, "transition")
        if not np.all(np.isfinite(r)):
            raise InvalidInput("reward: non-finite entry")
        if not self.unsafe and np.max(np.abs(r)) > 1.0:
            raise InvalidInput(f"reward: sup-norm {np.max(np.abs(r))!r} exceeds 1")
        g = float(self.discount)
        if not (0.0 < g < 1.0):
            raise InvalidInput(f"discount: {g!r} not in (0, 1)")
        if self.reward_sas is not None:
            rs = np.array(self.reward_sas, dtype=float)
            if rs.shape != p.shape:
                raise InvalidInput(f"reward_sas: expected shape {p.shape}, got {rs.shape}")
            if not self.unsafe and np.max(np.abs(rs)) > 1.0:
                raise InvalidInput("reward_sas: sup-norm exceeds 1")
            if np.max(np.abs((p * rs).sum(axis=2) - r)) > 1e-12:
                raise InvalidInput("reward: does not equal the expectation of reward_sas")
            rs.setflags(write=False)
            object.__setattr__(self, "reward_sas", rs)
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "discount", g)

    @classmethod
    def from_transition_rewards(cls, transition, reward_sas, discount, unsafe=False):
        p = np.asarray(transition, dtype=float)
        rs = np.asarray(reward_sas, dtype=float)
        return cls(p, (p * rs).sum(axis=2), discount, reward_sas=rs, unsafe=unsafe)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n(self) -> int:
        """Number of state-action pairs."""
        return self.num_states * self.num_actions

    def reward_vector(self) -> np.ndarray:
        return self.reward.T.reshape(-1)

    def transition_matrix(self) -> np.ndarray:
        """Kernel as an ``(n, S)`` matrix, row ``index(s, a)``."""
        return self.transition.transpose(1, 0, 2).reshape(self.n, self.num_states)


@dataclass(frozen=True, eq=False)
class BehaviorPolicy:
    beta: np.ndarray

    def __post_init__(self):
        b = np.array(self.beta, dtype=float)
        if b.ndim != 2:
            raise InvalidInput(f"policy: expected shape (S, A), got {b.shape}")
        _check_stochastic(b, "policy")
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "BehaviorPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    def matrix(self) -> np.ndarray:
        """``(S, n)`` matrix mapping a Q-vector to its expectation under beta."""
        s, a = self.beta.shape
        out = np.zeros((s, s * a))
        for act in range(a):
            out[np.arange(s), act * s + np.arange(s)] = self.beta[:, act]
        return out


@dataclass(frozen=True, eq=False)
class StateActionDistribution:
    """Probability mass over state-action pairs, stored in flat index order."""

    mass: np.ndarray
    num_states: int

    def __post_init__(self):
        m = np.array(self.mass, dtype=float).reshape(-1)
        if m.size % self.num_states:
            raise InvalidInput("distribution: length is not a multiple of num_states")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise InvalidInput("distribution: entries must be finite and nonnegative")
        if abs(m.sum() - 1.0) > PROB_TOL:
            raise InvalidInput(f"distribution: mass sums to {m.sum()!r}")
        if m.min() <= 0:
            i = int(np.argmin(m))
            raise ZeroMass(
                f"distribution: zero mass at (s={i % self.num_states}, a={i // self.num_states})"
            )
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @property
    def d_min(self) -> float:
        return float(self.mass.min())

    @property
    def d_max(self) -> float:
        return float(self.mass.max())

    def table(self) -> np.ndarray:
        """Mass as an ``(S, A)`` array."""
        return self.mass.reshape(-1, self.num_states).T.copy()


def chain_matrix(mdp: TabularMdp, policy: BehaviorPolicy) -> np.ndarray:
    """State-action transition matrix ``P @ Pi_beta`` of shape ``(n, n)``."""
    if policy.beta.shape != (mdp.num_states, mdp.num_actions):
        raise InvalidInput("policy shape does not match the MDP")
    return mdp.transition_matrix() @ policy.matrix()


def chain_period(pmat: np.ndarray) -> int:
    """Period of an irreducible chain via BFS levels."""
    graph = csr_matrix(pmat > 0)
    order, _ = breadth_first_order(graph, 0, directed=True)
    level = np.full(pmat.shape[0], -1)
    level[0] = 0
    for u in order:
        for v in graph.indices[graph.indptr[u]:graph.indptr[u + 1]]:
            if level[v] < 0:
                level[v] = level[u] + 1
    period = 0
    rows, cols = np.nonzero(pmat > 0)
    for u, v in zip(rows, cols):
        period = math.gcd(period, int(level[u] + 1 - level[v]))
    return period


def check_ergodic(pmat: np.ndarray) -> None:
    ncomp, _ = connected_components(csr_matrix(pmat > 0), directed=True, connection="strong")
    if ncomp != 1:
        raise NotErgodic(f"chain has {ncomp} strongly connected components")
    # a self-loop is sufficient (not necessary) for aperiodicity
    if np.any(np.diag(pmat) > 0):
        return
    period = chain_period(pmat)
    if period != 1:
        raise NotErgodic(f"chain is periodic with period {period}")


def stationary_vector(pmat: np.ndarray) -> np.ndarray:
    """Solve ``mu^T (P - I) = 0`` with ``sum(mu) = 1`` for an ergodic chain."""
    n = pmat.shape[0]
    lhs = np.vstack([pmat.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    mu = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def stationary_distribution(mdp: TabularMdp, policy: BehaviorPolicy) -> StateActionDistribution:
    pmat = chain_matrix(mdp, policy)
    check_ergodic(pmat)
    return StateActionDistribution(stationary_vector(pmat), mdp.num_states)


def iid_distribution(state_dist, policy: BehaviorPolicy) -> StateActionDistribution:
    p = np.asarray(state_dist, dtype=float)
    if p.shape != (policy.beta.shape[0],):
        raise InvalidInput("state distribution length does not match the policy")
    if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
        raise InvalidInput("state distribution must be nonnegative and sum to 1")
    table = p[:, None] * policy.beta
    if table.min() <= 0:
        s, a = np.argwhere(table <= 0)[0]
        raise ZeroMass(f"d(s={s}, a={a}) = 0")
    return StateActionDistribution(table.T.reshape(-1), p.size)


def greedy_values(q: np.ndarray, num_states: int) -> np.ndarray:
    """Per-state maximum of a flat Q-vector (works on batches along axis 0)."""
    q = np.asarray(q)
    return q.reshape(q.shape[:-1] + (-1, num_states)).max(axis=-2)


def bellman_operator(mdp: TabularMdp, q: np.ndarray) -> np.ndarray:
    return mdp.reward_vector() + mdp.discount * mdp.transition_matrix() @ greedy_values(q, mdp.num_states)


def _policy_value(mdp: TabularMdp, q: np.ndarray) -> np.ndarray:
    """Exact Q-function of the greedy policy of ``q``."""
    s = mdp.num_states
    act = np.argmax(q.reshape(-1, s), axis=0)
    sel = np.zeros((s, mdp.n))
    sel[np.arange(s), act * s + np.arange(s)] = 1.0
    lhs = np.eye(mdp.n) - mdp.discount * mdp.transition_matrix() @ sel
    return np.linalg.solve(lhs, mdp.reward_vector())


def optimal_q(mdp: TabularMdp, tol: float = 1e-12, q0=None) -> np.ndarray:
    """Value iteration, finished by one exact policy-evaluation polish."""
    if tol <= 0:
        raise InvalidInput("tol must be positive")
    q = np.zeros(mdp.n) if q0 is None else np.array(q0, dtype=float)
    g = mdp.discount
    scale = max(float(np.max(np.abs(bellman_operator(mdp, q) - q))), tol)
    limit = int(math.ceil(math.log(tol * (1 - g) / scale) / math.log(g))) + 1000 if scale > tol else 1000
    resid = np.inf
    for _ in range(max(limit, 1)):
        nxt = bellman_operator(mdp, q)
        resid = float(np.max(np.abs(nxt - q)))
        q = nxt
        if resid <= tol:
            break
    polished = _policy_value(mdp, q)
    if np.max(np.abs(bellman_operator(mdp, polished) - polished)) <= np.max(np.abs(bellman_operator(mdp, q) - q)):
        q = polished
    return q


def expected_update_map(mdp: TabularMdp, dist: StateActionDistribution, q: np.ndarray) -> np.ndarray:
    """``h(Q) = D(R + gamma P Pi_Q Q - Q)``; vectorized over leading axes."""
    q = np.asarray(q, dtype=float)
    target = mdp.reward_vector() + mdp.discount * greedy_values(q, mdp.num_states) @ mdp.transition_matrix().T
    return dist.mass * (target - q)


# --- JSON persistence -------------------------------------------------------

def mdp_to_dict(mdp: TabularMdp) -> dict:
    out = {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "discount": mdp.discount,
        "index_order": "index(s,a) = a*num_states + s; arrays are nested [s][a][s']",
        "transition": mdp.transition.tolist(),
        "reward": mdp.reward.tolist(),
    }
    if mdp.reward_sas is not None:
        out["reward_sas"] = mdp.reward_sas.tolist()
    return out


def dumps_mdp(mdp: TabularMdp) -> str:
    return json.dumps(mdp_to_dict(mdp), indent=1) + "\n"


def mdp_from_dict(data: dict, unsafe: bool = False) -> TabularMdp:
    for key in ("num_states", "num_actions", "discount", "transition", "reward"):
        if key not in data:
            raise InvalidInput(f"missing field {key!r}")
    ns, na = data["num_states"], data["num_actions"]
    if not isinstance(ns, int) or ns < 1:
        raise InvalidInput("num_states must be a positive integer")
    if not isinstance(na, int) or na < 1:
        raise InvalidInput("num_actions must be a positive integer")
    try:
        p = np.array(data["transition"], dtype=float)
        r = np.array(data["reward"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f"transition/reward not numeric arrays: {exc}") from None
    if p.shape != (ns, na, ns):
        raise InvalidInput(f"transition: expected shape {(ns, na, ns)}, got {p.shape}")
    rs = data.get("reward_sas")
    if not isinstance(data["discount"], (int, float)):
        raise InvalidInput("discount must be a number")
    return TabularMdp(p, r, data["discount"], reward_sas=None if rs is None else np.array(rs, float), unsafe=unsafe)


def load_mdp(path, unsafe: bool = False) -> TabularMdp:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InvalidInput(f"{path}: cannot read ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise InvalidInput(f"{path}: top level must be an object")
    return mdp_from_dict(data, unsafe=unsafe)


def save_mdp(mdp: TabularMdp, path) -> None:
    Path(path).write_text(dumps_mdp(mdp))
