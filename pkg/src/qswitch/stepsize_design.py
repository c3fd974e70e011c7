"""Lyapunov analysis at Q* and the diminishing step-size schedule built on it."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundViolated, DegenerateSpectrum, InvalidInput, StepTooLarge
from .matrix_analysis import solve_lyapunov, symmetric_sqrt
from .mdp_core import StateActionDistribution, TabularMdp
from .switching_system import build_tq, greedy_selector

REL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LyapunovAnalysis:
    """``T = T_{Q*}``, its Lyapunov matrix ``G`` and ``B = G^{1/2} T G^{-1/2}``."""

    t: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    g_half: np.ndarray
    g_inv_half: np.ndarray
    b: np.ndarray

    @property
    def g_norm(self) -> float:
        return float(np.linalg.norm(self.g, 2))

    @property
    def g_inv_norm(self) -> float:
        return float(np.linalg.norm(self.g_inv, 2))

    @property
    def b_norm(self) -> float:
        return float(np.linalg.norm(self.b, 2))

    @property
    def lambda_min_g_inv(self) -> float:
        return float(np.linalg.eigvalsh(self.g_inv)[0])


def analyze_lyapunov(mdp: TabularMdp, dist: StateActionDistribution, q_star) -> LyapunovAnalysis:
    t = build_tq(mdp, dist, greedy_selector(q_star, mdp.num_states, mdp.num_actions))
    return lyapunov_from_t(t)


def lyapunov_from_t(t) -> LyapunovAnalysis:
    g = solve_lyapunov(t)
    half, inv_half = symmetric_sqrt(g)
    g_inv = inv_half @ inv_half
    g_inv = 0.5 * (g_inv + g_inv.T)
    return LyapunovAnalysis(np.asarray(t, float), g, g_inv, half, inv_half, half @ t @ inv_half)


@dataclass(frozen=True)
class StepSizePlan:
    nu: float
    sigma_max_b: float
    xi: float
    theta: float
    beta: float
    num_pairs: int = 1
    gamma: float = 0.5
    d_min: float = 1.0
    d_max: float = 1.0
    certificate: dict = field(default_factory=dict, compare=False)

    def alpha(self, k):
        """``theta / (k + xi)``; accepts scalars or arrays."""
        return self.theta / (np.asarray(k, dtype=float) + self.xi)

    @property
    def alpha0(self) -> float:
        return self.theta / self.xi

    @property
    def xi_interval(self) -> tuple[float, float]:
        base = self.sigma_max_b ** 2 / self.nu ** 2
        return 8.0 * base, 16.0 * base

    def to_dict(self) -> dict:
        return {
            "nu": self.nu, "sigma_max_b": self.sigma_max_b, "xi": self.xi,
            "theta": self.theta, "beta": self.beta, "alpha0": self.alpha0,
            "certificate": dict(self.certificate),
        }


def plan_certificate(plan: StepSizePlan) -> dict:
    """Re-evaluate every admissibility inequality of a plan."""
    lo, hi = plan.xi_interval
    sa, g = plan.num_pairs, plan.gamma
    slack = 1.0 + REL_TOL
    return {
        "xi_in_admissible_interval": bool(lo / slack <= plan.xi <= hi * slack),
        "theta_matches_xi": bool(abs(plan.theta - plan.nu * plan.xi / (2 * plan.sigma_max_b ** 2)) <= REL_TOL * plan.theta),
        "beta_theta_at_least_2": bool(plan.beta * plan.theta * slack >= 2.0),
        "dmin_contraction_theta_at_least_2": bool(plan.d_min * (1 - g) * plan.theta * slack >= 2.0),
        "theta_upper_bound": bool(plan.theta <= 4 * sa / ((1 - g) * plan.d_min) * slack),
        "xi_lower_bound": bool(8.0 / sa ** 2 <= plan.xi * slack),
        "xi_upper_bound": bool(plan.xi <= 16 * sa ** 4.5 * plan.d_max ** 2 / ((1 - g) ** 2 * plan.d_min ** 2) * slack),
        "alpha0_keeps_operators_nonnegative": bool(plan.alpha0 <= slack / plan.d_max),
    }


def plan_parameters(nu: float, sigma: float, xi: float | None = None) -> tuple[float, float, float]:
    """``(xi, theta, beta)`` from ``nu`` and ``sigma_max(B)``; ``xi`` defaults to the lower endpoint."""
    if sigma <= 0:
        raise DegenerateSpectrum("sigma_max(B) is zero")
    lo, hi = 8 * sigma ** 2 / nu ** 2, 16 * sigma ** 2 / nu ** 2
    if xi is None:
        xi = lo
    elif not lo * (1 - REL_TOL) <= xi <= hi * (1 + REL_TOL):
        raise InvalidInput(f"xi={xi!r} outside the admissible interval [{lo!r}, {hi!r}]")
    return float(xi), nu * xi / (2 * sigma ** 2), nu / 2


def design_stepsize(lyap: LyapunovAnalysis, dist: StateActionDistribution, gamma: float,
                    xi: float | None = None, enforce_guard: bool = True) -> StepSizePlan:
    """Pick ``xi`` (lower admissible endpoint unless overridden) and derive ``theta, beta``.

    The guard ``alpha_0 <= 1/d_max`` cannot be repaired by moving ``xi``
    because ``alpha_0 = nu / (2 sigma^2)`` does not depend on it, so a
    violation raises ``StepTooLarge`` when ``enforce_guard`` is set.
    """
    sigma = float(np.linalg.svd(lyap.b, compute_uv=False)[0])
    nu = min((1 - gamma) * dist.d_min, lyap.lambda_min_g_inv)
    xi, theta, beta = plan_parameters(nu, sigma, xi)
    plan = StepSizePlan(
        nu=nu, sigma_max_b=sigma, xi=xi, theta=theta, beta=beta,
        num_pairs=dist.mass.size, gamma=float(gamma), d_min=dist.d_min, d_max=dist.d_max,
    )
    cert = plan_certificate(plan)
    if enforce_guard and not cert["alpha0_keeps_operators_nonnegative"]:
        raise StepTooLarge(
            f"alpha_0={plan.alpha0:.6g} exceeds 1/d_max={1 / dist.d_max:.6g}; no admissible xi helps"
        )
    return StepSizePlan(**{**plan.__dict__, "certificate": cert})


def xk_matrix(plan: StepSizePlan, b, k) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    return np.eye(b.shape[0]) + float(plan.alpha(k)) * b


def xk_contraction_bound(plan: StepSizePlan, b, k: int) -> float:
    """Return ``lambda_max(X_k^T X_k)`` after checking it against ``1 - beta alpha_k``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    x = xk_matrix(plan, b, k)
    lam = float(np.linalg.eigvalsh(x.T @ x)[-1])
    bound = 1.0 - plan.beta * float(plan.alpha(k))
    if lam > bound + 1e-12:
        raise BoundViolated(f"lambda_max(X_k^T X_k)={lam!r} > {bound!r} at k={k}")
    return lam
