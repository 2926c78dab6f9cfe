"""Command-line front end.

Subcommands ``solve``, ``compare``, ``verify`` and ``attainable`` all take the
same scenario and solver flags.  Parameters may also come from a flat
``key = value`` file (``--config``) or be replayed from a previous run summary
(``--from-summary``); explicit flags win over file values.

Exit codes: 0 success, 1 error, 2 non-convergence or a failed check.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attainable import dominance_check, sample_expected_endpoints
from .cost import PenaltyMode
from .direct import solve_direct
from .errors import PMPStarError
from .indirect import SolverConfig, solve_pmp_star, verify_extremal
from .scenarios import REGISTRY, get_scenario

SECTION = "run"

# key -> (type, default); shared by flags, config files and summaries
PARAMS = {
    "scenario": (str, "cheapest-stop"),
    "x0": (float, 1.0),
    "v0": (float, 1.0),
    "k": (float, 1.0),
    "t1": (float, 1.0),
    "steps": (int, 100),
    "order": (int, 5),
    "samples": (int, None),
    "seed": (int, 0),
    "tolerance": (float, 1e-8),
    "max_iterations": (int, 5000),
    "mode": (str, "terminal"),
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help=f"one of: {', '.join(sorted(REGISTRY))}")
    p.add_argument("--x0", type=float, help="mean initial position")
    p.add_argument("--v0", type=float, help="mean initial velocity")
    p.add_argument("--k", type=float, help="terminal penalty weight")
    p.add_argument("--t1", type=float, help="horizon")
    p.add_argument("--steps", type=int, help="number of grid intervals")
    p.add_argument("--order", type=int, help="Gauss-Hermite order per dimension")
    p.add_argument("--samples", type=int, help="use N Monte Carlo samples instead of quadrature")
    p.add_argument("--seed", type=int, help="seed for every random draw")
    p.add_argument("--tolerance", "--tol", dest="tolerance", type=float, help="residual tolerance")
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--mode", choices=["terminal", "absorbed"], help="terminal penalty handling")
    p.add_argument("--config", type=Path, help="flat key = value parameter file")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp from written files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmpstar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run the indirect solver and write a summary and control table")
    _add_common(p)
    p.add_argument("--from-summary", type=Path, help="replay the parameters recorded in a run summary")
    p.add_argument("--states", action="store_true", help="add per-ensemble-member states to the table")

    p = sub.add_parser("compare", help="indirect solver vs direct oracle")
    _add_common(p)

    p = sub.add_parser("verify", help="re-check optimality conditions and attainable-set dominance")
    _add_common(p)
    p.add_argument("--controls", type=int, default=2000, help="cloud size for the dominance check")
    p.add_argument("--amplitude", type=float, default=0.05, help="perturbation amplitude of cloud controls")

    p = sub.add_parser("attainable", help="write an expected-endpoint cloud as CSV")
    _add_common(p)
    p.add_argument("--controls", type=int, default=1000)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--around-solution", action="store_true", help="perturb the solver's control instead of zero")
    return parser


def read_params_file(path: Path) -> dict:
    cp = configparser.ConfigParser()
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = f"[{SECTION}]\n" + text
    cp.read_string(text)
    sect = cp[SECTION] if cp.has_section(SECTION) else cp[cp.sections()[0]]
    out = {}
    for key, (typ, _) in PARAMS.items():
        if key in sect and sect[key].strip() not in ("", "none", "None"):
            out[key] = typ(sect[key])
    return out


def resolve_params(args: argparse.Namespace) -> dict:
    params = {k: default for k, (_, default) in PARAMS.items()}
    for source in ("from_summary", "config"):
        path = getattr(args, source, None)
        if path is not None:
            params.update(read_params_file(path))
    for key in PARAMS:
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    return params


def _setup(params: dict):
    scenario = get_scenario(params["scenario"], x0=params["x0"], v0=params["v0"], k=params["k"],
                            t1=params["t1"], n_steps=params["steps"])
    config = SolverConfig(
        tolerance=params["tolerance"],
        max_iterations=params["max_iterations"],
        quadrature_order=params["order"],
        sample_size=params["samples"],
        seed=params["seed"],
        penalty_mode=PenaltyMode(params["mode"]),
    )
    return scenario, config


def write_summary(path: Path, params: dict, result, timestamp: bool) -> None:
    cp = configparser.ConfigParser()
    cp[SECTION] = {}
    sect = cp[SECTION]
    for key in PARAMS:
        sect[key] = "none" if params[key] is None else repr(params[key]) if isinstance(params[key], float) else str(params[key])
    sect["expected_cost"] = repr(result.expected_cost)
    sect["total_cost"] = repr(result.total_cost)
    sect["penalty_offset"] = repr(result.penalty_offset)
    sect["residual_max"] = repr(result.residual_max)
    sect["iterations"] = str(result.iterations)
    sect["converged"] = str(result.converged).lower()
    sect["nu"] = repr(result.nu)
    sect["ensemble"] = result.ensemble.provenance
    if timestamp:
        sect["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    with open(path, "w") as fh:
        cp.write(fh)


def write_control_table(path: Path, result, states=None) -> None:
    t = result.control.grid.times
    u = result.control.values
    header = ["t"] + [f"u{j}" for j in range(u.shape[1])]
    if states is not None:
        header += [f"q{i}_{j}" for i in range(states.shape[1]) for j in range(states.shape[2])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(t)):
            row = [repr(float(t[k]))] + [repr(float(x)) for x in u[k]]
            if states is not None:
                row += [repr(float(x)) for x in states[k].ravel()]
            w.writerow(row)


def cmd_solve(args) -> int:
    params = resolve_params(args)
    scenario, config = _setup(params)
    result = solve_pmp_star(scenario.system, scenario.distribution, scenario.cost, scenario.grid, config)
    args.out.mkdir(parents=True, exist_ok=True)
    write_summary(args.out / "summary.ini", params, result, not args.no_timestamp)
    states = None
    if args.states:
        from .dynamics import integrate_forward

        states = integrate_forward(scenario.system, result.ensemble.points, result.control, scenario.grid).states
    write_control_table(args.out / "control.csv", result, states)
    print(f"scenario       {scenario.name}")
    print(f"expected cost  {result.expected_cost:.12g}  (total {result.total_cost:.12g})")
    print(f"residual max   {result.residual_max:.3e}")
    print(f"iterations     {result.iterations}")
    print(f"converged      {result.converged}")
    return 0 if result.converged else 2


def cmd_compare(args) -> int:
    params = resolve_params(args)
    scenario, config = _setup(params)
    ind = solve_pmp_star(scenario.system, scenario.distribution, scenario.cost, scenario.grid, config)
    dirr = solve_direct(scenario.system, scenario.distribution, scenario.cost, scenario.grid, config)
    dc = abs(ind.total_cost - dirr.total_cost)
    du = float(np.max(np.abs(ind.control.values - dirr.control.values)))
    cost_tol = 1e-4 * (1.0 + abs(dirr.total_cost))
    u_tol = 1e-3 * (1.0 + float(np.max(np.abs(dirr.control.values))))
    ok_c, ok_u = dc <= cost_tol, du <= u_tol
    print(f"indirect cost   {ind.total_cost:.12g}  (residual {ind.residual_max:.2e}, {ind.iterations} it)")
    print(f"direct cost     {dirr.total_cost:.12g}  (residual {dirr.residual_max:.2e}, {dirr.iterations} it)")
    print(f"{'PASS' if ok_c else 'FAIL'}  cost difference     {dc:.3e} (tol {cost_tol:.1e})")
    print(f"{'PASS' if ok_u else 'FAIL'}  control sup-norm    {du:.3e} (tol {u_tol:.1e})")
    return 0 if ok_c and ok_u else 2


def cmd_verify(args) -> int:
    params = resolve_params(args)
    scenario, config = _setup(params)
    sc = scenario
    result = solve_pmp_star(sc.system, sc.distribution, sc.cost, sc.grid, config)
    report = verify_extremal(result, sc.system, sc.distribution, sc.cost, sc.grid, seed=params["seed"])
    for line in report.lines():
        print(line)
    cloud = sample_expected_endpoints(sc.system, sc.distribution, sc.cost, sc.grid, args.controls,
                                      args.amplitude, params["seed"], order=params["order"], base=result.control)
    dom = dominance_check(result, cloud)
    print(f"{'PASS' if dom.passed else 'FAIL'}  dominance: {dom.violations} of {dom.n_points} sampled controls "
          f"beat the solution (margin {dom.margin:.3e})")
    return 0 if report.passed and dom.passed and result.converged else 2


def cmd_attainable(args) -> int:
    params = resolve_params(args)
    scenario, config = _setup(params)
    sc = scenario
    base = None
    if args.around_solution:
        base = solve_pmp_star(sc.system, sc.distribution, sc.cost, sc.grid, config).control
    cloud = sample_expected_endpoints(sc.system, sc.distribution, sc.cost, sc.grid, args.controls,
                                      args.amplitude, params["seed"], order=params["order"], base=base)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "attainable.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cost"] + [f"q{j}" for j in range(cloud.shape[1] - 1)])
        for row in cloud:
            w.writerow([repr(float(x)) for x in row])
    print(f"wrote {cloud.shape[0]} expected endpoints to {path}")
    return 0


COMMANDS = {"solve": cmd_solve, "compare": cmd_compare, "verify": cmd_verify, "attainable": cmd_attainable}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (PMPStarError, OSError, configparser.Error, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
