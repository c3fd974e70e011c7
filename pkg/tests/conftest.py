import numpy as np
import pytest

from qswitch.mdp_core import BehaviorPolicy, TabularMdp, iid_distribution

from oracles import random_mdp_arrays


def make_random_problem(seed, ns=3, na=2, gamma=0.8):
    rng = np.random.default_rng(seed)
    p, r = random_mdp_arrays(rng, ns, na)
    mdp = TabularMdp(p, r, gamma)
    pol = BehaviorPolicy.uniform(ns, na)
    dist = iid_distribution(rng.dirichlet(np.ones(ns)) * 0.5 + 0.5 / ns, pol)
    return mdp, dist


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
