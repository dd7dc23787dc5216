"""Command-line front end: ``robinsym <solve|compare|convergence|counterexample|fcond>``.

Exit status: 0 when every binding check holds, 2 when one is violated,
1 on invalid input or a runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .compare import CounterexampleSpec, run_counterexample
from .scenario import (
    Scenario,
    ScenarioError,
    convergence_study,
    exit_status,
    fcond_report,
    parse_scenario,
    run_scenario,
    solve_only,
    to_json,
    write_convergence_csv,
)

log = logging.getLogger("robinsym")


def _load(args) -> Scenario:
    text = Path(args.scenario).read_text()
    s = parse_scenario(text)
    if getattr(args, "tol", None) is not None:
        if not args.tol > 0:
            raise ScenarioError("--tol must be positive")
        s.tol["cg"] = args.tol
    if getattr(args, "levels", None) is not None:
        s.levels = args.levels
    return s


def _write_staged(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / (name + ".tmp")
    tmp.write_text(text)
    tmp.replace(out / name)


def cmd_solve(args) -> int:
    doc = solve_only(_load(args), args.out)
    for row in doc["levels"]:
        log.info("level %d: h=%.4g u_l1=%.10g cg=%d", row["level"], row["h"], row["u_l1"], row["cg_iterations"])
    return 0


def cmd_compare(args) -> int:
    s = _load(args)
    status = run_scenario(s, args.out)
    log.info("%s: exit %d (report in %s)", s.name, status, args.out)
    return status


def cmd_convergence(args) -> int:
    s = _load(args)
    rows = convergence_study(s)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_convergence_csv(rows, out / "convergence.csv")
    for r in rows:
        log.info("level %d h=%.4g error=%.4e order=%.3f", r["level"], r["h"], r["error"], r["order"])
    return 0


def cmd_counterexample(args) -> int:
    report = run_counterexample(CounterexampleSpec(args.n, args.r))
    doc = report.to_dict()
    doc["exit_status"] = exit_status(report)
    _write_staged(Path(args.out), "report.json", to_json(doc) + "\n")
    log.info("u_l1=%.12g v_l1=%.12g", report.u_l1, report.v_l1)
    return exit_status(report)


def cmd_fcond(args) -> int:
    s = _load(args)
    res = fcond_report(s)
    _write_staged(Path(args.out), "fcond.json", to_json({"scenario": s.name, "N": s.N, "f_condition": res}) + "\n")
    log.info("f condition %s (worst ratio %.6g)", "satisfied" if res["satisfied"] else "violated",
             res["worst_ratio"])
    return 0 if res["satisfied"] else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robinsym", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_cmd(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--scenario", required=True, help="scenario JSON file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--levels", type=int, help="number of refinement levels (overrides the scenario)")
        sp.add_argument("--tol", type=float, help="relative residual tolerance of the linear solver")
        sp.set_defaults(func=fn)

    scenario_cmd("solve", cmd_solve, "discrete solves on every level")
    scenario_cmd("compare", cmd_compare, "full comparison report")
    scenario_cmd("convergence", cmd_convergence, "refinement study with observed orders")
    scenario_cmd("fcond", cmd_fcond, "check the source condition")
    ce = sub.add_parser("counterexample", help="closed-form two-ball counterexample")
    ce.add_argument("--n", type=int, default=3)
    ce.add_argument("--r", type=float, default=0.1)
    ce.add_argument("--out", required=True)
    ce.set_defaults(func=cmd_counterexample)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, ValueError, OSError, RuntimeError) as exc:
        print(f"robinsym: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
