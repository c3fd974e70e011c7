"""Closed-form constants, convergence envelopes and sample-complexity calculators.

Constants are assembled in log space so that large ``|S||A|`` or
``1/(1 - gamma)`` combinations do not overflow before they are compared.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, InvalidInput
from .mixing_analysis import MixingProfile, compute_kmix, log_mixing_bound


@dataclass(frozen=True)
class ProblemConstants:
    sa: int
    gamma: float
    d_min: float
    d_max: float
    q0_dist: float
    xi: float
    theta: float

    def __post_init__(self):
        if self.sa < 1 or self.d_min <= 0 or self.d_max < self.d_min or self.xi <= 0 or self.theta <= 0:
            raise InvalidInput("problem constants must be positive with d_min <= d_max")
        if not 0 < self.gamma < 1:
            raise InvalidInput("gamma must lie in (0, 1)")
        if self.q0_dist < 0:
            raise InvalidInput("q0_dist must be nonnegative")

    @classmethod
    def from_problem(cls, problem, q_lower0=None) -> "ProblemConstants":
        q0 = np.zeros(problem.mdp.n) if q_lower0 is None else np.asarray(q_lower0, float)
        return cls(problem.mdp.n, problem.mdp.discount, problem.dist.d_min, problem.dist.d_max,
                   float(np.linalg.norm(q0 - problem.q_star)), problem.plan.xi, problem.plan.theta)

    def to_dict(self) -> dict:
        return asdict(self)


def _log_term(c: ProblemConstants, coef: float, sa_exp: float, dmax_exp: float, gamma_exp: float,
              dmin_exp: float, q0_exp: float = 0.0) -> float:
    """log of ``coef sa^a d_max^b / ((1-gamma)^g d_min^e) * q0^q``."""
    if q0_exp and c.q0_dist == 0:
        return -math.inf
    return (math.log(coef) + sa_exp * math.log(c.sa) + dmax_exp * math.log(c.d_max)
            - gamma_exp * math.log1p(-c.gamma) - dmin_exp * math.log(c.d_min)
            + (q0_exp * math.log(c.q0_dist) if q0_exp else 0.0))


@dataclass(frozen=True, eq=False)
class Envelope:
    """Bound as a function of the iteration index.

    ``log_eval`` maps an array of ``k`` to the log of the bound.
    """

    name: str
    constants: dict
    log_eval: Callable = field(repr=False)
    k_min: int = 0

    def evaluate(self, k):
        kk = np.asarray(k, dtype=float)
        if np.any(kk < self.k_min):
            raise DomainError(f"{self.name} is only valid for k >= {self.k_min}")
        out = np.exp(self.log_eval(kk))
        return float(out) if out.ndim == 0 else out

    __call__ = evaluate


def _rate_envelope(name: str, c: ProblemConstants, branches: list, power: float) -> Envelope:
    log_coef = max(branches)
    snap = {"constants": c.to_dict(), "log_coefficient": log_coef, "coefficient": math.exp(log_coef),
            "power": power}
    return Envelope(name, snap, lambda k: log_coef - power * np.log(k + c.xi))


def envelope_lower_z(c: ProblemConstants) -> Envelope:
    """Bound on ``E[V(z_k)]``, decaying like ``1/(k + xi)``."""
    return _rate_envelope("lower_z", c, [
        _log_term(c, 8, 5.5, 2, 3, 3, q0_exp=2),
        _log_term(c, 72, 3, 0, 5, 3),
    ], 1.0)


def envelope_lower_q(c: ProblemConstants) -> Envelope:
    return _rate_envelope("lower_q", c, [
        _log_term(c, 4, 3, 1.5, 1.5, 1.5, q0_exp=1),
        _log_term(c, 14, 1.75, 0.5, 2.5, 1.5),
    ], 0.5)


def envelope_upper_diff(c: ProblemConstants) -> Envelope:
    return _rate_envelope("upper_diff", c, [
        _log_term(c, 16, 4, 2.5, 2.5, 2.5, q0_exp=1),
        _log_term(c, 56, 2.75, 1.5, 3.5, 2.5),
    ], 0.5)


def envelope_iid_total(c: ProblemConstants) -> Envelope:
    return _rate_envelope("iid_total", c, [
        _log_term(c, 32, 4, 2.5, 2.5, 2.5, q0_exp=1),
        _log_term(c, 112, 2.75, 1.5, 3.5, 2.5),
    ], 0.5)


def crossing_term_bound(c: ProblemConstants) -> float:
    return math.exp(_log_term(c, 32, 3, 0, 4, 2))


def markov_lower_error_bound(c: ProblemConstants) -> float:
    """Sup-norm bound on ``Q^L_k - Q*`` along Markovian runs started with ``|Q^L_0| <= 1``."""
    return 4.0 / ((1 - c.gamma) ** 2 * c.d_min)


def markov_z_bound(c: ProblemConstants) -> float:
    return math.exp(_log_term(c, 8, 0.5, 0, 2.5, 1.5))


def _sample_complexity_log(c: ProblemConstants, first_coef: float, eps: float, delta: float) -> float:
    b1 = _log_term(c, first_coef ** 2, 8, 0, 5, 5, q0_exp=2)
    b2 = _log_term(c, 112 ** 2, 5.5, 0, 7, 5)
    return max(b1, b2) - 2 * math.log(eps) - 2 * math.log(delta)


def sample_complexity_iid(c: ProblemConstants, epsilon: float, delta: float | None = None,
                          literal_tail: bool = False) -> int:
    """Samples that make ``E|Q_k - Q*|_inf <= epsilon`` (or the Markov-inequality tail bound).

    The tail form divides by ``delta^2``.  Its derivation defines the
    first constant with a factor 16 where the expectation bound has 32;
    ``literal_tail=True`` reproduces the 16, otherwise 32 is used so that
    ``delta = 1`` recovers the expectation form.
    """
    if epsilon <= 0:
        raise InvalidInput("epsilon must be positive")
    if delta is not None and not 0 < delta <= 1:
        raise InvalidInput("delta must lie in (0, 1]")
    first = 16.0 if (literal_tail and delta is not None) else 32.0
    log_k = _sample_complexity_log(c, first, epsilon, 1.0 if delta is None else delta)
    return int(math.ceil(math.exp(log_k)))


def sample_complexity_requirement(c: ProblemConstants, epsilon: float, delta: float | None = None,
                                  literal_tail: bool = False) -> float:
    """Right-hand side of the defining inequality ``k >= requirement``."""
    first = 16.0 if (literal_tail and delta is not None) else 32.0
    return math.exp(_sample_complexity_log(c, first, epsilon, 1.0 if delta is None else delta))


SAMPLE_COMPLEXITY_NOTE = (
    "tail-bound sample complexity: the derivation's constant uses 16 in the first branch while the "
    "expectation bound uses 32; default calculator uses 32, literal_tail=True uses 16"
)


# --- Markovian envelopes ----------------------------------------------------

def _markov_envelope(name: str, c: ProblemConstants, profile: MixingProfile, generic_c: float,
                     lead: list, mix_log: float, k_mix: int, tau_mode: str) -> Envelope:
    if generic_c <= 0:
        raise InvalidInput("generic_c must be positive")
    if tau_mode not in ("exact", "log_bound"):
        raise InvalidInput("tau_mode must be 'exact' or 'log_bound'")
    log_cstar = math.log(generic_c) + max(lead)
    log_cmix = math.log(generic_c) + mix_log

    def log_eval(k):
        alpha = c.theta / (k + c.xi)
        if tau_mode == "exact":
            tau = profile.tau_mix(alpha).astype(float) if np.ndim(k) else float(profile.tau_mix(float(alpha)))
        else:
            tau = np.maximum(log_mixing_bound(profile.m, profile.rho, c.theta, c.xi, k), 0.0)
        total = np.exp(log_cstar) + np.exp(log_cmix) * np.sqrt(tau)
        return np.log(total) - 0.5 * np.log(k + c.xi)

    snap = {"constants": c.to_dict(), "generic_c": generic_c, "c_star": math.exp(log_cstar),
            "mixing_coefficient": math.exp(log_cmix), "k_mix": k_mix, "tau_mode": tau_mode,
            "m": profile.m, "rho": profile.rho}
    return Envelope(name, snap, log_eval, k_min=k_mix)


def envelopes_markovian(c: ProblemConstants, profile: MixingProfile, generic_c: float = 1.0,
                        tau_mode: str = "exact") -> dict:
    """Envelopes on the lower error, the upper-lower gap and the total error.

    Their common form is ``C*/sqrt(k+xi) + C' sqrt(tau(alpha_k))/sqrt(k+xi)``
    with an unspecified generic constant; they are valid only from K_mix on.
    """
    if profile.k_mix is None:

        class _Plan:
            theta, xi = c.theta, c.xi

        compute_kmix(profile, _Plan)
    k_mix = profile.k_mix
    return {
        "lower_q": _markov_envelope("markov_lower_q", c, profile, generic_c, [
            _log_term(c, 1, 3, 1.5, 1.5, 1.5, q0_exp=1), _log_term(c, 1, 2.75, 0, 3, 2),
        ], _log_term(c, 1, 25 / 8, 0, 3, 2), k_mix, tau_mode),
        "upper_diff": _markov_envelope("markov_upper_diff", c, profile, generic_c, [
            _log_term(c, 1, 4, 2.5, 2.5, 2.5, q0_exp=1), _log_term(c, 1, 3.75, 0, 4, 3),
        ], _log_term(c, 1, 31 / 8, 1, 3.5, 2.5), k_mix, tau_mode),
        "total": _markov_envelope("markov_total", c, profile, generic_c, [
            _log_term(c, 1, 4, 2.5, 2.5, 2.5, q0_exp=1), _log_term(c, 1, 3.75, 0, 4, 3),
        ], _log_term(c, 1, 33 / 8, 1, 4, 3), k_mix, tau_mode),
    }


def sample_complexity_markovian(env: Envelope, epsilon: float, k_cap: int = 2 ** 62) -> int:
    """Smallest ``k >= K_mix`` with ``env(t) <= epsilon`` for ``t = k`` (bisection, log-bound mode)."""
    lo = env.k_min
    if env.evaluate(lo) <= epsilon:
        return lo
    hi = max(lo + 1, 1)
    while env.evaluate(hi) > epsilon:
        hi *= 2
        if hi > k_cap:
            raise DomainError("envelope does not reach epsilon below the cap")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if env.evaluate(mid) <= epsilon:
            hi = mid
        else:
            lo = mid
    return hi


# --- norm-bound checks at Q* -------------------------------------------------

def norm_bound_checks(lyap, plan, dist, gamma: float, tq_inf_norms=None) -> list[dict]:
    """Evaluate each closed-form interval on ``|G|, |G^-1|, |B|, |T_Q|_inf, theta, xi``."""
    sa = dist.mass.size
    dmin, dmax = dist.d_min, dist.d_max
    rel = 1e-12

    def item(name, value, lo, hi):
        ok = (lo is None or value >= lo * (1 - rel)) and (hi is None or value <= hi * (1 + rel))
        return {"name": name, "value": float(value), "lower": lo, "upper": hi, "pass": bool(ok)}

    out = [
        item("G_norm", lyap.g_norm, 1 / (4 * math.sqrt(sa) * dmax), sa / (2 * (1 - gamma) * dmin)),
        item("G_inv_norm", lyap.g_inv_norm, 2 * (1 - gamma) * dmin / sa, 4 * math.sqrt(sa) * dmax),
        item("B_norm", lyap.b_norm, (1 - gamma) * dmin / sa, 2 * sa ** 1.25 * dmax),
        item("T_star_inf_norm", float(np.max(np.abs(lyap.t).sum(axis=1))), None, 2 * dmax),
        item("theta", plan.theta, None, 4 * sa / ((1 - gamma) * dmin)),
        item("xi", plan.xi, 8 / sa ** 2, 16 * sa ** 4.5 * dmax ** 2 / ((1 - gamma) ** 2 * dmin ** 2)),
        item("beta_theta", plan.beta * plan.theta, 2.0, None),
        item("dmin_contraction_theta", dmin * (1 - gamma) * plan.theta, 2.0, None),
    ]
    for i, v in enumerate(tq_inf_norms or []):
        out.append(item(f"T_Q_inf_norm[{i}]", v, None, 2 * dmax))
    return out
