"""Seeded MDP generators and the shipped reference corpus."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInput, NotErgodic
from .mdp_core import BehaviorPolicy, TabularMdp, chain_matrix, check_ergodic

KINDS = ("random-dense", "garnet", "chain")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    num_states: int
    num_actions: int
    discount: float
    seed: int = 0
    branching: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"generator kind must be one of {KINDS}, got {self.kind!r}")
        if self.num_states < 1 or self.num_actions < 1:
            raise InvalidInput("num_states and num_actions must be positive")
        if not 0 < self.discount < 1:
            raise InvalidInput("discount must lie in (0, 1)")
        if self.kind == "garnet":
            b = self.branching if self.branching is not None else min(2, self.num_states)
            if not 1 <= b <= self.num_states:
                raise InvalidInput("garnet branching factor must be in [1, num_states]")
            object.__setattr__(self, "branching", b)

    def to_dict(self) -> dict:
        return asdict(self)


def _random_dense(spec: GeneratorSpec, rng) -> TabularMdp:
    s, a = spec.num_states, spec.num_actions
    p = rng.dirichlet(np.ones(s), size=(s, a))
    # rows drawn from a Dirichlet can be off by an ulp; renormalize
    p /= p.sum(axis=2, keepdims=True)
    r = np.clip(rng.uniform(-1.0, 1.0, size=(s, a)), -1.0, 1.0)
    return TabularMdp(p, r, spec.discount)


def _garnet(spec: GeneratorSpec, rng, max_tries: int = 1000) -> TabularMdp:
    s, a, b = spec.num_states, spec.num_actions, spec.branching
    uniform = BehaviorPolicy.uniform(s, a)
    for _ in range(max_tries):
        p = np.zeros((s, a, s))
        for i in range(s):
            for j in range(a):
                succ = rng.choice(s, size=b, replace=False)
                p[i, j, succ] = rng.dirichlet(np.ones(b))
        p /= p.sum(axis=2, keepdims=True)
        r = rng.uniform(-1.0, 1.0, size=(s, a))
        mdp = TabularMdp(p, r, spec.discount)
        try:
            check_ergodic(chain_matrix(mdp, uniform))
        except NotErgodic:
            continue
        return mdp
    raise NotErgodic(f"no ergodic garnet instance after {max_tries} draws")


def _chain(spec: GeneratorSpec, rng) -> TabularMdp:
    """States on a line; action 0 steps left, 1 steps right, others stay.

    The intended move succeeds with probability 0.7, otherwise the agent
    stays put.  Reward grows to the right, minus a small action cost and
    a seeded jitter so that Q* has no ties.
    """
    s, a = spec.num_states, spec.num_actions
    p = np.zeros((s, a, s))
    for i in range(s):
        for j in range(a):
            step = {0: -1, 1: 1}.get(j, 0)
            dest = min(max(i + step, 0), s - 1)
            p[i, j, dest] += 0.7
            p[i, j, i] += 0.3
    pos = np.arange(s) / max(s - 1, 1)
    r = pos[:, None] - 0.1 * np.arange(a)[None, :] / max(a - 1, 1)
    r = np.clip(0.9 * r + 0.05 * rng.uniform(-1.0, 1.0, size=(s, a)), -1.0, 1.0)
    return TabularMdp(p, r, spec.discount)


def generate(spec: GeneratorSpec) -> TabularMdp:
    rng = make_rng(spec.seed)
    if spec.kind == "random-dense":
        return _random_dense(spec, rng)
    if spec.kind == "garnet":
        return _garnet(spec, rng)
    return _chain(spec, rng)


# The three reference problems used by verification and acceptance runs.
REFERENCE_SPECS = {
    "chain-2x2": GeneratorSpec("chain", 2, 2, 0.5, seed=11),
    "dense-5x3": GeneratorSpec("random-dense", 5, 3, 0.8, seed=12),
    "garnet-6x3": GeneratorSpec("garnet", 6, 3, 0.9, seed=13, branching=3),
}


def reference_corpus() -> dict[str, TabularMdp]:
    return {name: generate(spec) for name, spec in REFERENCE_SPECS.items()}
