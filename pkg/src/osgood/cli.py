"""Command line front end.

    osgood certify  --config run.json [--out DIR] [--t-min A --t-max B --t-grid N]
    osgood certify  --config run.json --verify-only certificate.json
    osgood simulate --config run.json [--horizon H] [--threshold M]
    osgood criteria --config run.json
    osgood validate --config run.json

Exit codes
----------
0  success (certificate found / horizon reached / all checks pass)
1  input error
3  no certificate found, or a certificate failed verification
4  blow-up detected in a simulation
5  simulation step failure
6  a validation check failed
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .blowup import (BlowupCertificate, BlowupError, CertificateRejected, criterion_graph, criterion_mms,
                     search_certificate, verify_certificate)
from .config import ConfigError, Problem, RunConfig
from .graph import fit_volume_growth
from .kernel_models import lower_bound_check, validate_axioms
from .mild_solver import BLOWUP_DETECTED, REACHED_HORIZON, SolverError, StepControls, solve
from .semigroup import check_jensen, check_semigroup_axioms
from .source_term import check_asymptotics

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NO_CERTIFICATE = 3
EXIT_BLOWUP = 4
EXIT_STEP_FAILURE = 5
EXIT_VALIDATION = 6


class InputError(Exception):
    pass


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(data), indent=2, sort_keys=False) + "\n")


def _report(cfg: RunConfig, command: str, **body) -> dict:
    return {"command": command, "version": __version__, "seed": cfg.seed, "config": cfg.to_dict(), **body}


# -- commands -------------------------------------------------------------

def cmd_certify(cfg: RunConfig, out: Path, verify_only=None) -> int:
    problem = cfg.build_problem()
    f = cfg.build_source()
    a = cfg.build_initial(problem)
    sg = problem.semigroup
    if verify_only is not None:
        try:
            data = json.loads(Path(verify_only).read_text())
            if "certificate" in data and set(data) <= {"certificate", "command", "version", "seed", "config", "search"}:
                data = data["certificate"]
            if data is None:
                raise InputError(f"{verify_only} holds no certificate")
            claimed = BlowupCertificate.from_dict(data)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise InputError(f"cannot read certificate {verify_only}: {exc}") from None
        try:
            fresh = verify_certificate(sg, f, a, claimed.T, claimed.G)
        except CertificateRejected as exc:
            write_json(out / "verification.json", _report(cfg, "certify", verified=False, reason=exc.reason,
                                                          mean=exc.mean, threshold=exc.threshold))
            print(f"certificate rejected: {exc.reason}")
            return EXIT_NO_CERTIFICATE
        agrees = abs(fresh.margin - claimed.margin) <= 1e-9 * max(abs(claimed.margin), abs(claimed.mean_value))
        write_json(out / "verification.json", _report(cfg, "certify", verified=agrees,
                                                      certificate=fresh.to_dict(), claimed_margin=claimed.margin))
        print(f"verified T={fresh.T:.12g} margin={fresh.margin:.12g} (claimed {claimed.margin:.12g})")
        return EXIT_OK if agrees else EXIT_NO_CERTIFICATE
    t_min, t_max = float(cfg.option("t_min")), float(cfg.option("t_max"))
    grid = cfg.option("t_grid")
    cert = search_certificate(sg, f, a, (t_min, t_max), None if grid is None else int(grid),
                              int(cfg.option("per_decade")))
    search = {"t_min": t_min, "t_max": t_max, "grid_size": grid, "per_decade": cfg.option("per_decade")}
    payload = cert.to_dict() if cert is not None else {"certificate": None}
    write_json(out / "certificate.json", payload)
    write_json(out / "report.json", _report(cfg, "certify", certificate=None if cert is None else cert.to_dict(),
                                            search=search))
    if cert is None:
        print("no certificate found on the search grid")
        return EXIT_NO_CERTIFICATE
    print(f"certificate: T={cert.T:.12g} |G|={len(cert.G)} mean={cert.mean_value:.12g} "
          f"threshold={cert.threshold:.12g} margin={cert.margin:.6g} form={cert.form}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    problem = cfg.build_problem()
    f = cfg.build_source()
    a = cfg.build_initial(problem)
    horizon = cfg.option("horizon")
    if horizon is None:
        raise InputError("simulate needs analysis.horizon or --horizon")
    controls = StepControls(rtol=float(cfg.option("rtol")), atol=float(cfg.option("atol")),
                            threshold=float(cfg.option("threshold")), p=float(cfg.option("p")))
    trace = solve(problem.semigroup, f, a, float(horizon), controls)
    out.mkdir(parents=True, exist_ok=True)
    trace.write_csv(out / "trace.csv")
    if cfg.option("dump_states"):
        trace.dump_states(out / "states.npz")
    write_json(out / "status.json", _report(cfg, "simulate", **trace.status_block()))
    if trace.status == BLOWUP_DETECTED:
        print(f"blow-up detected: T_emp={trace.T_emp:.10g} +- {trace.T_emp_error:.2g}")
        return EXIT_BLOWUP
    if trace.status == REACHED_HORIZON:
        print(f"reached horizon {horizon} with ||u||_inf={trace.sup_norms[-1]:.6g}")
        return EXIT_OK
    print(f"step failure: {trace.reason}")
    return EXIT_STEP_FAILURE


def _asymptotics(cfg: RunConfig, f):
    kappa, gamma = cfg.option("kappa"), cfg.option("gamma")
    if kappa is None or gamma is None:
        known = getattr(f, "osgood_asymptotics", None)
        if known is None:
            raise InputError("source has no known (kappa, gamma); set analysis.kappa and analysis.gamma")
        kappa = known[0] if kappa is None else kappa
        gamma = known[1] if gamma is None else gamma
    start, stop, num = cfg.option("asymptotics_grid")
    report = check_asymptotics(f, float(kappa), float(gamma), np.geomspace(float(start), float(stop), int(num)))
    return report


def cmd_criteria(cfg: RunConfig, out: Path) -> int:
    problem = cfg.build_problem()
    f = cfg.build_source()
    asym = _asymptotics(cfg, f)
    result: dict = {"asymptotics": asym.to_dict()}
    if problem.kind == "graph":
        g = problem.graph
        x = cfg.option("basepoint")
        x = g.vertices[g.n // 2] if x is None else x
        r_max = cfg.option("r_max")
        if r_max is None:
            raise InputError("criteria on a graph needs analysis.r_max")
        fit = fit_volume_growth(g, x, int(r_max))
        verdict = criterion_graph(fit.theta, asym.gamma)
        result["volume_growth"] = fit.to_dict()
    else:
        alpha, beta, _ = problem.model.lower_bound
        verdict = criterion_mms(alpha, beta, asym.gamma)
        result["lower_bound"] = {"alpha": alpha, "beta": beta}
    result["criterion"] = verdict.to_dict()
    if not asym.holds:
        # the growth hypothesis fails on the grid, so the criterion does not apply
        result["criterion"]["verdict"] = "theorem-silent"
        result["criterion"]["note"] = "F(1/t) <= kappa t^gamma fails on the grid"
    write_json(out / "criteria.json", _report(cfg, "criteria", **result))
    print(f"product={verdict.product:.6g} bound={verdict.bound:.6g} verdict={result['criterion']['verdict']}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, out: Path) -> int:
    problem = cfg.build_problem()
    f = cfg.build_source()
    rng = cfg.rng()
    sg = problem.semigroup
    checks: dict = {}
    jensen_worst, jensen_fail = math.inf, 0
    for _ in range(int(cfg.option("jensen_cases"))):
        phi = rng.uniform(0.0, 2.0, sg.n) * (rng.random(sg.n) < 0.7)
        for t in cfg.option("jensen_times"):
            rep = check_jensen(sg, f, float(t), phi)
            jensen_worst = min(jensen_worst, rep.min_slack)
            jensen_fail += not rep.passed
    checks["jensen"] = {"min_slack": jensen_worst, "failures": jensen_fail, "passed": jensen_fail == 0}
    times = [float(t) for t in cfg.option("validate_times")]
    if problem.kind == "graph":
        checks["semigroup"] = check_semigroup_axioms(sg, times, rng).to_dict()
    else:
        model = problem.model
        k = int(cfg.option("sample_points"))
        pts = np.unique(np.linspace(0, model.n - 1, k).astype(int))
        axioms = validate_axioms(model, times, pts, tol=float(cfg.option("axiom_tol")))
        checks["axioms"] = axioms.to_dict()
        pairs = [(int(x), int(y)) for x in pts for y in pts]
        checks["lower_bound"] = lower_bound_check(model, times, pairs)
    passed = all(c["passed"] for c in checks.values())
    write_json(out / "validation.json", _report(cfg, "validate", passed=passed, checks=checks))
    for name, c in checks.items():
        print(f"{name}: {'pass' if c['passed'] else 'FAIL'}")
    return EXIT_OK if passed else EXIT_VALIDATION


COMMANDS = {"certify": cmd_certify, "simulate": cmd_simulate, "criteria": cmd_criteria, "validate": cmd_validate}


# -- argument handling ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osgood", description="Blow-up certificates for u' = -Lu + f(u).")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config (JSON)")
        p.add_argument("--out", help="output directory (default: config 'output')")
        p.add_argument("--seed", type=int, help="seed for randomized checks")
        p.add_argument("--t-min", type=float, dest="t_min")
        p.add_argument("--t-max", type=float, dest="t_max")
        p.add_argument("--t-grid", type=int, dest="t_grid", help="number of search grid points")
        p.add_argument("--horizon", type=float)
        p.add_argument("--threshold", type=float, help="divergence threshold for ||u||_inf")
        if name == "certify":
            p.add_argument("--verify-only", metavar="CERT", help="re-verify a certificate file and exit")
            p.add_argument("--sweep", metavar="KEY=V1,V2", help="run once per source parameter value")
    return parser


def _parse_sweep(text: str):
    key, _, values = text.partition("=")
    if not key or not values:
        raise InputError(f"--sweep expects KEY=V1,V2,..., got {text!r}")
    try:
        return key.strip(), [float(v) for v in values.split(",")]
    except ValueError:
        raise InputError(f"--sweep values must be numbers: {values!r}") from None


def _threads() -> int:
    raw = os.environ.get("OSGOOD_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"OSGOOD_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _sweep(cfg: RunConfig, out: Path, spec: str) -> int:
    key, values = _parse_sweep(spec)
    configs = []
    for v in values:
        source = dict(cfg.source)
        source[key] = v
        sub = RunConfig.from_dict({**cfg.to_dict(), "source": source}, cfg.path)
        configs.append((f"{key}={v:g}", sub))
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        codes = list(pool.map(lambda item: cmd_certify(item[1], out / item[0]), configs))
    write_json(out / "sweep.json", {"seed": cfg.seed, "runs": {name: code for (name, _), code in zip(configs, codes)}})
    return EXIT_OK if all(c == EXIT_OK for c in codes) else EXIT_NO_CERTIFICATE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise InputError("--seed must be nonnegative")
            cfg.seed = args.seed
        cfg = cfg.with_analysis(t_min=args.t_min, t_max=args.t_max, t_grid=args.t_grid,
                                horizon=args.horizon, threshold=args.threshold)
        out = Path(args.out) if args.out else cfg._resolve(cfg.output)
        if args.command == "certify" and args.sweep:
            return _sweep(cfg, out, args.sweep)
        if args.command == "certify":
            return cmd_certify(cfg, out, args.verify_only)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, InputError, BlowupError, SolverError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
