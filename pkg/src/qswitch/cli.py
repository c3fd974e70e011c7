"""Command-line front end.

Exit codes: 0 success, 1 runtime error, 2 invalid input, 3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bound_envelopes import (
    SAMPLE_COMPLEXITY_NOTE,
    ProblemConstants,
    crossing_term_bound,
    envelope_iid_total,
    envelope_lower_q,
    envelope_upper_diff,
    envelopes_markovian,
    norm_bound_checks,
    sample_complexity_iid,
)
from .comparison_simulator import log_schedule, prepare_problem, run_ensemble
from .errors import InvalidInput, QSwitchError
from .generators import KINDS, REFERENCE_SPECS, GeneratorSpec, generate
from .matrix_analysis import hurwitz_certificate
from .mdp_core import BehaviorPolicy, dumps_mdp, load_mdp, mdp_from_dict
from .mixing_analysis import compute_kmix, fit_geometric_envelope
from .verification import mixing_checks, operator_checks, simulation_checks

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT, EXIT_VERIFY = 0, 1, 2, 3

CSV_COLUMNS = ["k", "alpha_k", "mean_err_inf", "se_err_inf", "mean_lower_err", "mean_diff_upper_lower",
               "mean_vz", "envelope_total", "envelope_lower", "envelope_diff"]


@dataclass
class ExperimentConfig:
    """JSON config.  ``mdp`` is one of ``{"file": path}``,
    ``{"reference": name}`` or ``{"generator": {...GeneratorSpec fields}}``."""

    mdp: dict = field(default_factory=lambda: {"reference": "dense-5x3"})
    model: str = "iid"
    horizon: int = 10_000
    num_runs: int = 20
    base_seed: int = 0
    log_ratio: float = 1.25
    generic_c: float = 1.0
    xi: float | None = None
    state_dist: list | None = None
    initial_state_dist: list | None = None
    output_dir: str = "out"
    unsafe: bool = False

    def __post_init__(self):
        if self.model not in ("iid", "markov"):
            raise InvalidInput(f"model must be 'iid' or 'markov', got {self.model!r}")
        if not isinstance(self.horizon, int) or self.horizon < 1:
            raise InvalidInput("horizon must be an integer >= 1")
        if not isinstance(self.num_runs, int) or self.num_runs < 1:
            raise InvalidInput("num_runs must be an integer >= 1")
        if not isinstance(self.mdp, dict) or len(self.mdp) != 1 or next(iter(self.mdp)) not in ("file", "reference", "generator"):
            raise InvalidInput("mdp must have exactly one of 'file', 'reference', 'generator'")
        if self.log_ratio <= 1:
            raise InvalidInput("log_ratio must exceed 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def build_mdp(self):
        kind, val = next(iter(self.mdp.items()))
        if kind == "file":
            return load_mdp(val, unsafe=self.unsafe)
        if kind == "reference":
            if val not in REFERENCE_SPECS:
                raise InvalidInput(f"unknown reference MDP {val!r}; choose from {sorted(REFERENCE_SPECS)}")
            return generate(REFERENCE_SPECS[val])
        try:
            return generate(GeneratorSpec(**val))
        except TypeError as exc:
            raise InvalidInput(f"bad generator spec: {exc}") from None


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInput(f"cannot read config {path}: {exc}") from None
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise InvalidInput(f"bad config field: {exc}") from None


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=1) + "\n")


def _problem(cfg: ExperimentConfig):
    mdp = cfg.build_mdp()
    problem = prepare_problem(mdp, BehaviorPolicy.uniform(mdp.num_states, mdp.num_actions), cfg.model,
                              state_dist=cfg.state_dist, initial_state_dist=cfg.initial_state_dist, xi=cfg.xi)
    return mdp, problem


def _provenance(cfg: ExperimentConfig, mdp) -> dict:
    return {"config": cfg.to_dict(), "config_hash": cfg.digest(),
            "mdp_hash": hashlib.sha256(dumps_mdp(mdp).encode()).hexdigest()}


def analysis_report(cfg: ExperimentConfig) -> dict:
    mdp, problem = _problem(cfg)
    lyap, plan, dist = problem.lyap, problem.plan, problem.dist
    cert = hurwitz_certificate(lyap.t)
    c = ProblemConstants.from_problem(problem)
    checks = norm_bound_checks(lyap, plan, dist, mdp.discount)
    return {
        **_provenance(cfg, mdp),
        "index_order": "index(s,a) = a*num_states + s",
        "q_star": problem.q_star,
        "distribution": {"mass": dist.mass, "d_min": dist.d_min, "d_max": dist.d_max},
        "hurwitz_certificate": cert.__dict__,
        "T_star": lyap.t,
        "G": lyap.g,
        "G_eigenvalues": np.linalg.eigvalsh(lyap.g),
        "B_singular_values": np.linalg.svd(lyap.b, compute_uv=False),
        "stepsize_plan": plan.to_dict(),
        "constants": c.to_dict(),
        "crossing_term_bound": crossing_term_bound(c),
        "sample_complexity_iid": {"eps=0.1": sample_complexity_iid(c, 0.1),
                                  "eps=0.1,delta=0.1": sample_complexity_iid(c, 0.1, 0.1),
                                  "note": SAMPLE_COMPLEXITY_NOTE},
        "bound_checks": checks,
        "all_bound_checks_pass": all(x["pass"] for x in checks),
    }


def cmd_analyze(cfg: ExperimentConfig, out: Path | None) -> int:
    report = analysis_report(cfg)
    if out:
        _write_json(out / "analysis.json", report)
    for item in report["bound_checks"]:
        print(f"{'PASS' if item['pass'] else 'FAIL'}  {item['name']} = {item['value']:.6g}")
    return EXIT_OK


def ensemble_rows(problem, ens, generic_c: float = 1.0, profile=None) -> list[dict]:
    c = ProblemConstants.from_problem(problem)
    ks = ens.ks
    if problem.model == "iid":
        env = {"total": envelope_iid_total(c), "lower": envelope_lower_q(c), "diff": envelope_upper_diff(c)}
        k_min = 0
    else:
        mk = envelopes_markovian(c, profile, generic_c)
        env = {"total": mk["total"], "lower": mk["lower_q"], "diff": mk["upper_diff"]}
        k_min = profile.k_mix
    rows = []
    for j, k in enumerate(ks):
        row = {"k": int(k), "alpha_k": float(ens.alpha[j]), "mean_err_inf": ens.mean["err_inf"][j],
               "se_err_inf": ens.se["err_inf"][j], "mean_lower_err": ens.mean["lower_err"][j],
               "mean_diff_upper_lower": ens.mean["diff_upper_lower"][j], "mean_vz": ens.mean["vz"][j]}
        for key in ("total", "lower", "diff"):
            row[f"envelope_{key}"] = env[key].evaluate(k) if k >= k_min else ""
        rows.append(row)
    return rows


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.num_runs < 2:
        raise InvalidInput("simulate needs at least two runs")
    mdp, problem = _problem(cfg)
    profile = None
    meta = {**_provenance(cfg, mdp), "stepsize_plan": problem.plan.to_dict(),
            "constants": ProblemConstants.from_problem(problem).to_dict()}
    if cfg.model == "markov":
        mu0 = problem.initial_state_dist
        profile = fit_geometric_envelope(mdp, problem.policy, mu0, 1000)
        compute_kmix(profile, problem.plan)
        _write_json(out / "mixing.json", profile.to_dict())
        meta["k_mix"] = profile.k_mix
    ens = run_ensemble(problem, cfg.num_runs, cfg.base_seed, cfg.horizon,
                       schedule=log_schedule(cfg.horizon, cfg.log_ratio))
    rows = ensemble_rows(problem, ens, cfg.generic_c, profile)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ensemble.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    meta.update({"seeds": ens.seeds, "checks": ens.checks, "sample_complexity_note": SAMPLE_COMPLEXITY_NOTE})
    _write_json(out / "metadata.json", meta)
    print(f"wrote {out / 'ensemble.csv'} ({len(rows)} rows)")
    return EXIT_OK


def verify_problem(cfg: ExperimentConfig, label: str) -> list:
    mdp, problem = _problem(cfg)
    results = operator_checks(problem, seed=cfg.base_seed)
    sim, _ = simulation_checks(problem, max(cfg.num_runs, 2), cfg.horizon, cfg.base_seed)
    results += sim
    if cfg.model == "markov":
        results += mixing_checks(problem)[0]
    for r in results:
        r.name = f"{label}/{cfg.model}/{r.name}"
    return results


def cmd_verify(cfg: ExperimentConfig | None, out: Path | None, runs: int | None, horizon: int | None,
               model: str | None) -> int:
    if cfg is None:
        configs = [(name, ExperimentConfig(mdp={"reference": name}, model=m, horizon=horizon or 2000,
                                           num_runs=runs or 10))
                   for name in REFERENCE_SPECS for m in ((model,) if model else ("iid", "markov"))]
    else:
        configs = [("config", cfg)]
    results = []
    for label, c in configs:
        results += verify_problem(c, label)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    if out:
        _write_json(out / "verify.json", [r.__dict__ for r in results])
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def cmd_generate(spec: GeneratorSpec, out: Path) -> int:
    mdp = generate(spec)
    text = dumps_mdp(mdp)
    if dumps_mdp(mdp_from_dict(json.loads(text))) != text:
        raise QSwitchError("generated MDP does not round-trip through the loader")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_mixing(cfg: ExperimentConfig, out: Path | None, horizon: int) -> int:
    cfg = ExperimentConfig(**{**cfg.to_dict(), "model": "markov"})
    mdp, problem = _problem(cfg)
    checks, profile = mixing_checks(problem, horizon)
    if out:
        _write_json(out / "mixing.json", {**profile.to_dict(), **_provenance(cfg, mdp)})
    for r in checks:
        print(r.line())
    return EXIT_OK if all(r.passed for r in checks) else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qswitch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default=None):
        p.add_argument("--config", type=Path, help="experiment config JSON")
        p.add_argument("--mdp", type=Path, help="MDP JSON file (overrides the config's MDP)")
        p.add_argument("--reference", choices=sorted(REFERENCE_SPECS), help="use a shipped reference MDP")
        p.add_argument("--seed", type=int, help="base seed")
        p.add_argument("--out", type=Path, default=out_default, help="output directory")
        p.add_argument("--runs", type=int, help="number of Monte-Carlo runs")
        p.add_argument("--horizon", type=int, help="iterations per run")
        p.add_argument("--model", choices=["iid", "markov"])

    common(sub.add_parser("analyze", help="Lyapunov analysis, step-size plan and bound checks"))
    common(sub.add_parser("simulate", help="run an ensemble and write CSV + metadata"), Path("out"))
    common(sub.add_parser("verify", help="run the invariant suite (reference corpus by default)"))
    mix = sub.add_parser("mixing", help="mixing profile and K_mix")
    common(mix)
    gen = sub.add_parser("generate", help="write a generated MDP to JSON")
    gen.add_argument("--config", type=Path, help="generator spec JSON")
    gen.add_argument("--kind", choices=KINDS, default="random-dense")
    gen.add_argument("--states", type=int, default=5)
    gen.add_argument("--actions", type=int, default=3)
    gen.add_argument("--discount", type=float, default=0.8)
    gen.add_argument("--branching", type=int)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=Path, required=True, help="output file")
    return parser


def _config_from_args(args) -> ExperimentConfig | None:
    if args.config is None and args.mdp is None and args.reference is None:
        if args.command == "verify":
            return None
        cfg = ExperimentConfig()
    else:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
    data = cfg.to_dict()
    if args.mdp is not None:
        data["mdp"] = {"file": str(args.mdp)}
    if args.reference is not None:
        data["mdp"] = {"reference": args.reference}
    for attr, key in (("seed", "base_seed"), ("runs", "num_runs"), ("horizon", "horizon"), ("model", "model")):
        if getattr(args, attr, None) is not None:
            data[key] = getattr(args, attr)
    if getattr(args, "out", None) is not None:
        data["output_dir"] = str(args.out)
    return ExperimentConfig(**data)


def _origin(exc: BaseException) -> str:
    """Name of the library module where an exception was raised."""
    frames = [f for f in traceback.extract_tb(exc.__traceback__) if "qswitch" in f.filename]
    return Path(frames[-1].filename).stem if frames else "unknown"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            if args.config:
                try:
                    spec = GeneratorSpec(**json.loads(args.config.read_text()))
                except (OSError, json.JSONDecodeError, TypeError) as exc:
                    raise InvalidInput(f"bad generator spec: {exc}") from None
            else:
                spec = GeneratorSpec(args.kind, args.states, args.actions, args.discount, args.seed, args.branching)
            return cmd_generate(spec, args.out)
        cfg = _config_from_args(args)
        if args.command == "verify":
            return cmd_verify(cfg, args.out, args.runs, args.horizon, args.model)
        if args.command == "analyze":
            return cmd_analyze(cfg, args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg, Path(cfg.output_dir))
        return cmd_mixing(cfg, args.out, args.horizon or 500)
    except InvalidInput as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"error in {_origin(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
