"""Named invariant checks over one problem, shared by the CLI and the tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bound_envelopes import (
    ProblemConstants,
    crossing_term_bound,
    envelope_iid_total,
    envelope_lower_q,
    envelope_lower_z,
    envelope_upper_diff,
    markov_lower_error_bound,
    markov_z_bound,
    norm_bound_checks,
)
from .comparison_simulator import (
    IDENTITY_TOL,
    SANDWICH_TOL,
    Z_CONSISTENCY_TOL,
    CoupledProblem,
    run_ensemble,
)
from .matrix_analysis import hurwitz_certificate, lyapunov_residual
from .mixing_analysis import compute_kmix, fit_geometric_envelope, log_mixing_bound
from .stepsize_design import xk_contraction_bound
from .switching_system import build_a_b, build_tq, greedy_selector, inf_norm, noise_bound


@dataclass
class CheckResult:
    name: str
    passed: bool
    count: int = 1
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  (n={self.count}) {self.detail}".rstrip()


def operator_checks(problem: CoupledProblem, num_random: int = 50, seed: int = 0) -> list[CheckResult]:
    mdp, dist, lyap, plan = problem.mdp, problem.dist, problem.lyap, problem.plan
    rng = np.random.default_rng(seed)
    res = []
    r1 = lyapunov_residual(lyap.g, lyap.t)
    res.append(CheckResult("lyapunov_residual", r1 <= 1e-8, 1, f"residual={r1:.2e}"))
    r2 = inf_norm(lyap.b + lyap.b.T + lyap.g_inv)
    res.append(CheckResult("similarity_identity", r2 <= 1e-8, 1, f"residual={r2:.2e}"))

    sel_star = greedy_selector(problem.q_star, mdp.num_states, mdp.num_actions)
    worst_margin, worst_norm, hurwitz_ok, nonneg_ok, b_ok, tq_norms = 0.0, 0.0, True, True, True, []
    for _ in range(num_random):
        q = rng.uniform(-1, 1, mdp.n) / (1 - mdp.discount)
        sel = greedy_selector(q, mdp.num_states, mdp.num_actions)
        tq = build_tq(mdp, dist, sel)
        cert = hurwitz_certificate(tq)
        hurwitz_ok &= cert.certified and cert.max_real_eigenvalue < 0
        worst_margin = max(worst_margin, float(np.max(np.abs(np.array(cert.dominance_margins) - (1 - mdp.discount) * dist.mass))))
        tq_norms.append(inf_norm(tq))
        k = int(rng.integers(0, 10 ** 6))
        ops = build_a_b(tq, sel, sel_star, problem.q_star, float(plan.alpha(k)), mdp, dist)
        target = 1 - float(plan.alpha(k)) * dist.d_min * (1 - mdp.discount)
        worst_norm = max(worst_norm, abs(inf_norm(ops.a_qk) - target))
        nonneg_ok &= bool(np.min(ops.a_qk) >= 0)
        b_ok &= bool(np.max(ops.b_qk) <= 1e-12)
    res.append(CheckResult("hurwitz_certificates", bool(hurwitz_ok), num_random))
    res.append(CheckResult("dominance_margin_equals_(1-gamma)d", worst_margin <= 1e-12, num_random, f"max_err={worst_margin:.1e}"))
    res.append(CheckResult("A_inf_norm_identity", worst_norm <= 1e-12, num_random, f"max_err={worst_norm:.1e}"))
    res.append(CheckResult("A_nonnegative", bool(nonneg_ok), num_random))
    res.append(CheckResult("b_nonpositive", bool(b_ok), num_random))
    for item in norm_bound_checks(lyap, plan, dist, mdp.discount, tq_norms):
        if item["name"].startswith("T_Q_inf_norm["):
            continue
        res.append(CheckResult(f"bound:{item['name']}", item["pass"], 1, f"value={item['value']:.4g}"))
    res.append(CheckResult("bound:T_Q_inf_norm_random", all(v <= 2 * dist.d_max * (1 + 1e-12) for v in tq_norms), len(tq_norms)))
    res.append(CheckResult("stepsize_certificate", all(plan.certificate.values()), len(plan.certificate)))
    ok = True
    for k in (0, 1, 10, 100, 1000, 10000):
        try:
            xk_contraction_bound(plan, lyap.b, k)
        except Exception:
            ok = False
    res.append(CheckResult("Xk_contraction", ok, 6))
    return res


def simulation_checks(problem: CoupledProblem, num_runs: int, horizon: int, base_seed: int = 0,
                      envelope_margin: float = 10.0):
    """Run an ensemble and check every per-step invariant plus envelope dominance."""
    ens = run_ensemble(problem, num_runs, base_seed, horizon, strict=False)
    ch, gamma = ens.checks, problem.mdp.discount
    c = ProblemConstants.from_problem(problem)
    res = [
        CheckResult("sandwich", ch["min_sandwich_margin"] >= -SANDWICH_TOL, num_runs * horizon,
                    f"min_margin={ch['min_sandwich_margin']:.2e}"),
        CheckResult("matrix_form_identity", ch["max_identity_error"] <= IDENTITY_TOL, num_runs * horizon,
                    f"max_err={ch['max_identity_error']:.1e}"),
        CheckResult("z_consistency", ch["max_z_consistency_error"] <= Z_CONSISTENCY_TOL, num_runs * len(ens.ks)),
        CheckResult("q_bound", ch["max_q_inf"] <= 1 / (1 - gamma) + 1e-12, num_runs * horizon,
                    f"max={ch['max_q_inf']:.4g}"),
        CheckResult("noise_bound", ch["max_w_inf"] <= noise_bound(gamma), num_runs * horizon,
                    f"max={ch['max_w_inf']:.4g}"),
    ]
    if problem.model == "iid":
        pairs = [("lower_q", "lower_err", envelope_lower_q(c)), ("upper_diff", "diff_upper_lower", envelope_upper_diff(c)),
                 ("iid_total", "err_inf", envelope_iid_total(c)), ("lower_z", "vz", envelope_lower_z(c))]
        for name, metric, env in pairs:
            ratio = float(np.max(ens.mean[metric] * envelope_margin / env.evaluate(ens.ks)))
            res.append(CheckResult(f"envelope:{name}", ratio <= 1.0, len(ens.ks), f"max mean*{envelope_margin:g}/env={ratio:.2e}"))
    else:
        res += [
            CheckResult("markov_lower_error_bound", ch["max_lower_err_inf"] <= markov_lower_error_bound(c), num_runs * horizon),
            CheckResult("markov_z_bound", ch["max_z_inf"] <= markov_z_bound(c), num_runs * horizon),
            CheckResult("crossing_term_bound", ch["max_abs_crossing"] <= crossing_term_bound(c), num_runs * horizon,
                        f"max={ch['max_abs_crossing']:.3g} bound={crossing_term_bound(c):.3g}"),
        ]
    return res, ens


def mixing_checks(problem: CoupledProblem, horizon: int = 500) -> tuple[list[CheckResult], object]:
    mdp, policy = problem.mdp, problem.policy
    mu0 = problem.initial_state_dist if problem.initial_state_dist is not None else np.eye(mdp.num_states)[0]
    prof = fit_geometric_envelope(mdp, policy, mu0, horizon)
    kmix = compute_kmix(prof, problem.plan)
    ks = np.array([1, 10, 100, 10 ** 4])
    alpha = problem.plan.alpha(ks)
    tau = prof.tau_mix(alpha)
    applicable = prof.m >= alpha
    bound = log_mixing_bound(prof.m, prof.rho, problem.plan.theta, problem.plan.xi, ks)
    ok = bool(np.all(tau[applicable] <= bound[applicable] + 1e-12)) and bool(np.all(tau[~applicable] == 0))
    return [
        CheckResult("mixing_envelope", prof.envelope_ok, horizon + 1, f"m={prof.m:.3g} rho={prof.rho:.4g}"),
        CheckResult("mixing_time_log_bound", ok, len(ks)),
        CheckResult("kmix_certified", True, 1, f"K_mix={kmix}"),
    ], prof
