"""Exact mixing analysis of the state-action chain induced by a behavior policy."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import HorizonTooShort, InvalidInput, SlemDegenerate
from .mdp_core import BehaviorPolicy, TabularMdp, chain_matrix, check_ergodic, stationary_distribution, stationary_vector

M_FLOOR = 1e-15
# distances below this are float noise and are not used to fit m
DTV_NOISE = 1e-14
# SLEM stand-in for chains that mix in one step (e.g. a single state)
RHO_FLOOR = 1e-12


def tv_distance(p, q) -> float:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    return 0.5 * float(np.abs(p - q).sum(axis=-1)) if p.ndim == 1 else 0.5 * np.abs(p - q).sum(axis=-1)


def slem(pmat: np.ndarray) -> float:
    """Second-largest eigenvalue modulus of a stochastic matrix."""
    mods = np.sort(np.abs(np.linalg.eigvals(pmat)))[::-1]
    return float(mods[1]) if mods.size > 1 else 0.0


def _tau(m: float, rho: float, c) -> np.ndarray:
    """Smallest integer k >= 0 with m rho^k <= c, elementwise in c."""
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0):
        raise InvalidInput("c must be positive")
    lr = math.log(1.0 / rho)
    k = np.maximum(np.ceil(np.log(m / c) / lr - 1e-9), 0.0)
    # repair float rounding on either side
    for _ in range(3):
        up = m * rho ** k > c
        k = np.where(up, k + 1, k)
        down = (k > 0) & (m * rho ** np.maximum(k - 1, 0) <= c)
        k = np.where(down, k - 1, k)
    return k.astype(np.int64)


@dataclass(eq=False)
class MixingProfile:
    mu_k: np.ndarray
    d_tv_curve: np.ndarray
    m: float
    rho: float
    mu_inf: np.ndarray
    k_mix: int | None = None
    envelope_ok: bool = True

    def tau_mix(self, c):
        out = _tau(self.m, self.rho, c)
        return int(out) if np.ndim(out) == 0 else out

    def to_dict(self, c_samples=(0.5, 0.1, 0.01, 1e-3, 1e-4)) -> dict:
        return {
            "m": self.m,
            "rho": self.rho,
            "k_mix": self.k_mix,
            "tau_mix_samples": [[c, self.tau_mix(c)] for c in c_samples],
            "d_tv_curve": self.d_tv_curve.tolist(),
        }


def _as_pair_distribution(mu0, policy: BehaviorPolicy) -> np.ndarray:
    mu0 = np.asarray(mu0, dtype=float)
    ns, na = policy.beta.shape
    if mu0.shape == (ns,) and ns != ns * na:
        mu0 = (mu0[:, None] * policy.beta).T.reshape(-1)
    if mu0.shape != (ns * na,):
        raise InvalidInput("mu0 must be a distribution over states or state-action pairs")
    if np.any(mu0 < 0) or abs(mu0.sum() - 1) > 1e-12:
        raise InvalidInput("mu0 must be nonnegative and sum to 1")
    return mu0


def fit_geometric_envelope(mdp: TabularMdp, policy: BehaviorPolicy, mu0, horizon: int) -> MixingProfile:
    """Evolve ``mu_k`` and fit ``d_TV(mu_k, mu_inf) <= m rho^k`` with ``rho`` the SLEM.

    ``mu0`` may be given over states (actions then drawn from the policy)
    or over state-action pairs.
    """
    if horizon < 0:
        raise InvalidInput("horizon must be nonnegative")
    pmat = chain_matrix(mdp, policy)
    check_ergodic(pmat)
    mu_inf = stationary_vector(pmat)
    ref = stationary_distribution(mdp, policy).mass
    assert np.max(np.abs(ref - mu_inf)) <= 1e-10
    rho = slem(pmat)
    if rho >= 1 - 1e-12:
        raise SlemDegenerate(f"SLEM {rho!r} is numerically 1")
    rho = max(rho, RHO_FLOOR)
    mu0 = _as_pair_distribution(mu0, policy)

    # Propagate the deviation from mu_inf and strip its stationary
    # component each step so relative precision survives tiny distances.
    delta = mu0 - mu_inf
    devs = np.empty((horizon + 1, pmat.shape[0]))
    for k in range(horizon + 1):
        devs[k] = delta
        delta = delta @ pmat
        delta -= delta.sum() * mu_inf
    mu_k = mu_inf + devs
    dtv = 0.5 * np.abs(devs).sum(axis=1)

    ks = np.arange(horizon + 1)
    m = max(M_FLOOR, float(dtv[0]))
    use = dtv > DTV_NOISE
    if np.any(use):
        log_m = float(np.max(np.log(dtv[use]) - ks[use] * math.log(rho)))
        if log_m > math.log(m):
            m = math.exp(log_m)
    env = m * rho ** ks.astype(float)
    ok = bool(np.all(dtv <= env * (1 + 1e-9) + DTV_NOISE))
    return MixingProfile(mu_k, dtv, m, rho, mu_inf, envelope_ok=ok)


def mixing_time(profile: MixingProfile, c: float) -> int:
    if c <= 0:
        raise InvalidInput("c must be positive")
    return profile.tau_mix(c)


def log_mixing_bound(m: float, rho: float, theta: float, xi: float, k) -> np.ndarray:
    """``log(m (k + xi) / theta) / log(1/rho) + 1``, an upper bound on ``tau(alpha_k)`` when ``m >= alpha_k``."""
    return np.log(m * (np.asarray(k, float) + xi) / theta) / math.log(1.0 / rho) + 1.0


def _kmix_certificate(m, rho, theta, xi, horizon) -> bool:
    """Beyond ``horizon`` the condition ``t >= 2 tau(alpha_t)`` can no longer fail."""
    lr = math.log(1.0 / rho)
    if m * (horizon + xi) / theta <= 1.0:
        # alpha_t >= m up to here; check where the bound first applies instead
        horizon = max(horizon, math.ceil(theta / m - xi))
    grows = horizon + xi >= 2.0 / lr
    return bool(grows and horizon - 2 * float(log_mixing_bound(m, rho, theta, xi, horizon)) >= 0)


def kmix_scan(m: float, rho: float, theta: float, xi: float, horizon: int) -> int:
    """Smallest k such that ``t >= 2 tau(alpha_t)`` for every scanned ``t >= k``."""
    t = np.arange(horizon + 1)
    tau = _tau(m, rho, theta / (t + xi))
    bad = np.nonzero(t < 2 * tau)[0]
    return int(bad[-1] + 1) if bad.size else 0


def compute_kmix(profile: MixingProfile, plan, scan_horizon: int | None = None) -> int:
    """K_mix by direct scan, certified past the scan by the logarithmic bound.

    With ``scan_horizon=None`` the horizon doubles until the certificate
    holds; an explicit horizon that is too short raises ``HorizonTooShort``.
    """
    m, rho, theta, xi = profile.m, profile.rho, plan.theta, plan.xi
    if scan_horizon is None:
        horizon = 1024
        while not _kmix_certificate(m, rho, theta, xi, horizon):
            horizon *= 2
            if horizon > 2 ** 40:
                raise HorizonTooShort("no certified scan horizon below 2^40")
    else:
        horizon = int(scan_horizon)
        if not _kmix_certificate(m, rho, theta, xi, horizon):
            raise HorizonTooShort(f"condition not certified beyond t={horizon}")
    k = kmix_scan(m, rho, theta, xi, horizon)
    profile.k_mix = k
    return k
