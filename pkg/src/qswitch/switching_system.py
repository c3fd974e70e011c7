"""Greedy selectors, the switched error dynamics operators and the noise term."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StepTooLarge
from .mdp_core import StateActionDistribution, TabularMdp, expected_update_map, greedy_values


@dataclass(frozen=True, eq=False)
class GreedySelector:
    """One-hot map picking ``max_a Q(s, a)`` per state, lowest action on ties."""

    chosen_action: np.ndarray
    num_actions: int

    @property
    def num_states(self) -> int:
        return self.chosen_action.size

    @property
    def columns(self) -> np.ndarray:
        """Flat index of the chosen pair for each state."""
        return self.chosen_action * self.num_states + np.arange(self.num_states)

    def apply(self, q: np.ndarray) -> np.ndarray:
        return np.asarray(q)[..., self.columns]

    def matrix(self) -> np.ndarray:
        out = np.zeros((self.num_states, self.num_states * self.num_actions))
        out[np.arange(self.num_states), self.columns] = 1.0
        return out


def greedy_selector(q, num_states: int, num_actions: int) -> GreedySelector:
    q = np.asarray(q, dtype=float).reshape(num_actions, num_states)
    act = np.argmax(q, axis=0)  # argmax returns the first maximizer
    act.setflags(write=False)
    return GreedySelector(act, num_actions)


def _p_pi(mdp: TabularMdp, sel: GreedySelector) -> np.ndarray:
    """``P Pi`` as a dense ``(n, n)`` matrix."""
    out = np.zeros((mdp.n, mdp.n))
    out[:, sel.columns] = mdp.transition_matrix()
    return out


def build_tq(mdp: TabularMdp, dist: StateActionDistribution, sel: GreedySelector) -> np.ndarray:
    """``T_Q = gamma D P Pi_Q - D``."""
    d = dist.mass
    return mdp.discount * d[:, None] * _p_pi(mdp, sel) - np.diag(d)


def apply_tq(mdp: TabularMdp, dist: StateActionDistribution, columns, x: np.ndarray) -> np.ndarray:
    """``T_Q x`` without forming the matrix; batched over leading axes.

    ``columns`` holds the selected flat indices per state, either shared
    ``(S,)`` or one row per batch element ``(R, S)``.
    """
    columns = np.asarray(columns)
    picked = x[..., columns] if columns.ndim == 1 else np.take_along_axis(x, columns, axis=-1)
    return dist.mass * (mdp.discount * picked @ mdp.transition_matrix().T - x)


@dataclass(frozen=True, eq=False)
class SystemOperators:
    t_q: np.ndarray
    a_qk: np.ndarray
    b_qk: np.ndarray
    b_diff: np.ndarray
    alpha: float


def build_a_b(tq, sel: GreedySelector, sel_star: GreedySelector, q_star, alpha_k: float,
              mdp: TabularMdp, dist: StateActionDistribution) -> SystemOperators:
    if alpha_k <= 0:
        raise ValueError("alpha_k must be positive")
    tq = np.asarray(tq, dtype=float)
    a = np.eye(tq.shape[0]) + alpha_k * tq
    if np.min(a) < 0:
        raise StepTooLarge(
            f"alpha_k={alpha_k:.6g} makes A_Q,k negative (need alpha_k <= 1/d_max = {1 / dist.d_max:.6g})"
        )
    diff = alpha_k * mdp.discount * dist.mass[:, None] * (_p_pi(mdp, sel) - _p_pi(mdp, sel_star))
    b = alpha_k * mdp.discount * dist.mass * (
        mdp.transition_matrix() @ (sel.apply(q_star) - sel_star.apply(q_star))
    )
    return SystemOperators(tq, a, b, diff, float(alpha_k))


def inf_norm(m) -> float:
    return float(np.max(np.abs(np.asarray(m)).sum(axis=-1)))


@dataclass(frozen=True, eq=False)
class NoiseRecord:
    w: np.ndarray
    sample: tuple
    k: int
    delta: np.ndarray


def sample_noise(mdp: TabularMdp, dist: StateActionDistribution, q, sample, model: str = "iid",
                 k: int = 0) -> NoiseRecord:
    """``w = Delta - h(Q)`` for one observed transition ``(s, a, s', r)``.

    ``dist`` is the sampling distribution for the i.i.d. model and the
    stationary distribution for the Markovian model.
    """
    if model not in ("iid", "markov"):
        raise ValueError(f"unknown model {model!r}")
    s, a, s_next, r = sample
    q = np.asarray(q, dtype=float)
    i = a * mdp.num_states + s
    delta = np.zeros(mdp.n)
    delta[i] = r + mdp.discount * greedy_values(q, mdp.num_states)[s_next] - q[i]
    w = delta - expected_update_map(mdp, dist, q)
    return NoiseRecord(w, (int(s), int(a), int(s_next), float(r)), int(k), delta)


def noise_bound(gamma: float) -> float:
    return 4.0 / (1.0 - gamma)


def noise_second_moment_bound(gamma: float) -> float:
    return 9.0 / (1.0 - gamma) ** 2
