"""Command-line driver: ``mecopt sweep | converge | solve-one``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np
import yaml

from .harness import (SCHEMES, VARIABLES, SweepSpec, check_convergence, check_data_sweep,
                      check_latency_sweep, convergence_csv, draw_seeds, rows_to_csv, run_convergence_report,
                      run_sweep, solve_scheme)
from .inner_pd import InnerConfig
from .outer_descent import OuterConfig
from .scenario import CSI_MODES, ScenarioError, build_scenario, draw_channel

DEFAULT_GRIDS = {
    "u": [10e3, 20e3, 30e3, 40e3, 50e3, 60e3, 70e3],
    "Td": [8e-3, 10e-3, 12e-3, 14e-3, 16e-3, 18e-3, 20e-3, 22e-3, 24e-3],
    "scheme": list(SCHEMES),
    "csi_mode": list(CSI_MODES),
}


def read_scenario(path: str | None) -> tuple[dict, dict, dict]:
    """Scenario overrides plus the optional ``solver: {outer: ..., inner: ...}`` section."""
    if path is None:
        return {}, {}, {}
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must hold a mapping")
    solver = data.pop("solver", None) or {}
    return data, dict(solver.get("outer") or {}), dict(solver.get("inner") or {})


def _grid(variable: str, text: str | None) -> list:
    if text is None:
        return DEFAULT_GRIDS[variable]
    items = [x.strip() for x in text.split(",") if x.strip()]
    return [float(x) for x in items] if variable in ("u", "Td") else items


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _report(checks) -> bool:
    for c in checks:
        print(c.line(), file=sys.stderr)
    return all(c.passed for c in checks)


def cmd_sweep(args) -> int:
    config, outer, inner = read_scenario(args.scenario)
    sweep = SweepSpec(variable=args.variable, grid=_grid(args.variable, args.grid), draws=args.draws,
                     seed=args.seed, scheme=args.scheme, csi_mode=args.csi_mode, method=args.method,
                     config=config, outer=outer, inner=inner)
    rows = run_sweep(sweep)
    _emit(rows_to_csv(rows, sweep), args.output)
    if not args.assert_checks:
        return 0
    if args.variable == "u":
        latency = build_scenario(config, seed=0).compute.latency
        checks = check_data_sweep(rows, latency)
    elif args.variable == "Td":
        checks = check_latency_sweep(rows)
    else:
        print(f"no trend checks defined for a {args.variable} sweep", file=sys.stderr)
        return 0
    return 0 if _report(checks) else 1


def cmd_converge(args) -> int:
    config, outer, inner = read_scenario(args.scenario)
    report = run_convergence_report(config, seed=args.seed, csi_mode=args.csi_mode, outer=outer, inner=inner)
    _emit(convergence_csv(report), args.output)
    for method, rep in report.items():
        print(f"{method}: outer {rep['outer_iterations']} inner {rep['inner_iterations']} "
              f"termination {rep['termination']} objective {rep['objectives'][-1]:.6e}", file=sys.stderr)
    if not args.assert_checks:
        return 0
    return 0 if _report(check_convergence(report)) else 1


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(type(x))


def cmd_solve_one(args) -> int:
    config, outer, inner = read_scenario(args.scenario)
    layout_seed, channel_seed = draw_seeds(args.seed, 0)
    scn = build_scenario(config, seed=layout_seed)
    ch = draw_channel(scn, seed=channel_seed, csi_mode=args.csi_mode)
    ocfg = OuterConfig(**{**outer, "method": args.method})
    sol = solve_scheme(args.scheme, scn, ch, ocfg, InnerConfig(**inner))
    out = {
        "scheme": args.scheme,
        "termination": sol.termination,
        "inner_status": sol.inner_status,
        "outer_iterations": sol.outer_iterations,
        "inner_iterations": sol.inner_iterations,
        "requests": sol.requests,
        "allocation": sol.alloc.as_dict(),
        "energy": {"E_total_weighted": sol.energy.E_total_weighted, "E_u": sol.energy.E_u,
                   "E_m": sol.energy.E_m},
        "timing": {"T1": sol.timing.T1, "T2": sol.timing.T2, "T3": sol.timing.T3,
                   "T_total": sol.timing.T_total, "latency": scn.compute.latency},
        "offloaded_fraction": sol.offloaded_fraction,
    }
    _emit(json.dumps(out, indent=2, default=_jsonable) + "\n", args.output)
    if not args.assert_checks:
        return 0
    ok = sol.feasible and sol.timing.T_total <= scn.compute.latency * (1 + 1e-4)
    print(f"{'PASS' if ok else 'FAIL'} deadline met: T_total {sol.timing.T_total:.6e} s", file=sys.stderr)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="YAML scenario file overlaid on the built-in defaults")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--csi-mode", choices=CSI_MODES, default="perfect")
    common.add_argument("--method", choices=("newton", "gradient"), default="newton")
    common.add_argument("--output", "-o", help="output file (default: stdout)")
    common.add_argument("--assert", dest="assert_checks", action="store_true",
                        help="run trend checks and exit nonzero if any fails")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mecopt", description="Energy-optimal partial offloading to MEC servers.")
    sub = parser.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", parents=[common], help="Monte-Carlo parameter sweep to CSV")
    sw.add_argument("--variable", choices=VARIABLES, default="u")
    sw.add_argument("--grid", help="comma-separated sweep values (bits for u, seconds for Td)")
    sw.add_argument("--draws", type=int, default=100)
    sw.add_argument("--scheme", choices=SCHEMES, default="partial")
    sw.set_defaults(func=cmd_sweep)

    cv = sub.add_parser("converge", parents=[common], help="gradient vs Newton iteration report")
    cv.set_defaults(func=cmd_converge)

    so = sub.add_parser("solve-one", parents=[common], help="solve a single instance and print JSON")
    so.add_argument("--scheme", choices=SCHEMES, default="partial")
    so.set_defaults(func=cmd_solve_one)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
