"""Asynchronous Q-learning analysed as a switched linear system."""
from .mdp_core import (
    BehaviorPolicy,
    StateActionDistribution,
    TabularMdp,
    expected_update_map,
    iid_distribution,
    load_mdp,
    optimal_q,
    stationary_distribution,
)
from .comparison_simulator import prepare_problem, run_ensemble, run_trajectory
from .stepsize_design import analyze_lyapunov, design_stepsize

__all__ = [
    "BehaviorPolicy", "StateActionDistribution", "TabularMdp", "expected_update_map",
    "iid_distribution", "load_mdp", "optimal_q", "stationary_distribution",
    "prepare_problem", "run_ensemble", "run_trajectory", "analyze_lyapunov", "design_stepsize",
]
