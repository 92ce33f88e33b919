"""Command-line entry point.

    d2du throughput --scenario s.json --densities 5e-5,5e-5,1e-4,1e-4,3e-5
    d2du simulate   --scenario s.json --densities ... --trials 2000 --seed 7
    d2du validate   --scenario s.json --densities ... --grid lambda_C=2e-5,5e-5,1e-4
    d2du optimize   --scenario s.json --budgets 1e-4,1e-4,1e-5
    d2du region     --scenario s.json --kind system --budgets 5e-4,5e-4,8e-5 --kappa-l 0.8 --kappa-u 0.7
    d2du replay     out/optimize.manifest.json

Exit codes: 0 ok, 1 tolerance failure, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import io
from .analytic import DEFAULT_TOL, analytic_report
from .errors import ConfigError, NumericalFailure
from .model import RATE_FIELDS, DensityVector
from .optimize import P1Instance, baseline_equal_proportion, solve_p1, write_trajectory_csv
from .region import solve_p3, sweep_region_C, sweep_region_D, sweep_region_system, write_region_csv
from .sim import estimate_throughputs

EXIT_OK, EXIT_TOL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_VALIDATE_TOL = 0.10


class _InputError(Exception):
    pass


def _densities(args, scen: io.Scenario) -> DensityVector:
    if args.densities is not None:
        return io.parse_densities(args.densities)
    if scen.densities is not None:
        return scen.densities
    raise ConfigError("no densities: pass --densities or add a 'densities' section to the scenario")


def _budgets(args, scen: io.Scenario) -> tuple:
    if args.budgets is not None:
        return io.parse_number_list(args.budgets, "--budgets", 3)
    if scen.budgets is not None:
        return scen.budgets
    raise ConfigError("no budgets: pass --budgets or add a 'budgets' section to the scenario")


def _out(args, name: str, man: io.RunManifest) -> Path:
    p = Path(args.out_dir) / name
    man.outputs.append(str(p))
    return p


def cmd_throughput(args, scen, man) -> int:
    lam = _densities(args, scen)
    tol = DEFAULT_TOL if args.tol is None else args.tol
    man.tolerances["quadrature"] = tol
    rep = analytic_report(lam, scen.cfg, tol=tol)
    text = io.dump_json(rep.to_dict(), _out(args, "throughput.json", man))
    print(text)
    return EXIT_OK


def _mc_dict(res) -> dict:
    d = res.report.to_dict()
    d["queued"] = res.queued
    return d


def cmd_simulate(args, scen, man) -> int:
    lam = _densities(args, scen)
    seed = io.stream_seed(args.seed, "simulate")
    res = estimate_throughputs(lam, scen.cfg, args.trials, seed)
    out = _mc_dict(res)
    ana = analytic_report(lam, scen.cfg)
    out["analytic_delta"] = {
        k: (getattr(res.report, k) - getattr(ana, k)) for k in RATE_FIELDS + ("p_CU", "p_DU", "p_W")
    }
    print(io.dump_json(out, _out(args, "simulate.json", man)))
    return EXIT_OK


def _parse_grid(spec: str | None) -> list[tuple[str, float]]:
    if spec is None:
        spec = "lambda_C=2e-5,5e-5,1e-4"
    points = []
    for part in spec.split(";"):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigError(f"--grid entry '{part}' must look like name=v1,v2,...")
        name, vals = part.split("=", 1)
        name = name.strip()
        if name not in io.DENSITY_KEYS:
            raise ConfigError(f"--grid: unknown density '{name}'")
        for v in vals.split(","):
            if v.strip():
                try:
                    points.append((name, float(v)))
                except ValueError as exc:
                    raise ConfigError(f"--grid: {exc}") from exc
    if not points:
        raise ConfigError("--grid is empty")
    return points


def cmd_validate(args, scen, man) -> int:
    base = _densities(args, scen)
    grid = _parse_grid(args.grid)
    tol = DEFAULT_VALIDATE_TOL if args.tol is None else args.tol
    man.tolerances["relative"] = tol
    rows, failures = [], 0
    for idx, (name, value) in enumerate(grid):
        lam = base.with_(**{name: value})
        ana = analytic_report(lam, scen.cfg)
        res = estimate_throughputs(lam, scen.cfg, args.trials, io.stream_seed(args.seed, "validate", idx))
        for k in RATE_FIELDS:
            mc = getattr(res.report, k)
            if math.isnan(mc):
                continue
            a = getattr(ana, k)
            ci = res.report.ci_halfwidth[k]
            rel = abs(a - mc) / abs(mc) if mc else math.inf
            ok = abs(a - mc) <= max(tol * abs(mc), ci)
            failures += not ok
            rows.append((name, value, k, a, mc, ci, rel, "pass" if ok else "fail"))
    header = ("parameter", "value", "quantity", "analytic", "mc_mean", "ci99_halfwidth", "rel_error", "status")
    io.write_rows_csv(_out(args, "validate.csv", man), header, rows)
    for r in rows:
        print(f"{r[0]}={r[1]:.3e} {r[2]:5s} analytic={r[3]:.4e} mc={r[4]:.4e} "
              f"ci={r[5]:.2e} rel={r[6]:.3f} {r[7]}")
    return EXIT_TOL if failures else EXIT_OK


def cmd_optimize(args, scen, man) -> int:
    bC, bD, lw = _budgets(args, scen)
    inst = P1Instance(scen.cfg, bC, bD, lw)
    man.tolerances["tau_Mbps"] = scen.cfg.tau
    sol = solve_p1(inst)
    base_lam, base_R = baseline_equal_proportion(inst)
    out = {
        "status": sol.status,
        "message": sol.message,
        "iterations": sol.iterations,
        "densities": sol.densities,
        "initial": sol.initial,
        "R_total_bps": sol.R_total,
        "report": sol.report.to_dict() if sol.report is not None else None,
        "kkt": sol.kkt,
        "baseline": {"densities": base_lam, "R_total_bps": base_R},
    }
    print(io.dump_json(out, _out(args, "optimize.json", man)))
    write_trajectory_csv(sol, _out(args, "trajectory.csv", man))
    return EXIT_OK


def cmd_region(args, scen, man) -> int:
    cfg = scen.cfg
    kind = args.kind
    n = args.grid_int
    if kind == "system":
        bC, bD, lw = _budgets(args, scen)
        if args.kappa_l is None or args.kappa_u is None:
            raise ConfigError("--kind system needs --kappa-l and --kappa-u")
        b = sweep_region_system(bC, bD, args.kappa_l, args.kappa_u, lw, cfg, n)
        if not b.points:
            print(io.dump_json({"status": "empty", "diagnostic": b.diagnostic},
                               _out(args, "region_system_p3.json", man)))
            return EXIT_OK
        p3 = solve_p3(b)
        write_region_csv(b, _out(args, "region_system.csv", man))
        write_region_csv(b, _out(args, "region_system_cloud.csv", man), include_cloud=True)
        out = {"R_l_bps": p3.R_l, "R_u_bps": p3.R_u, "R_total_bps": p3.R_total, "rho": p3.rho,
               "lambda_l": p3.lambda_l, "lambda_u": p3.lambda_u, "densities": p3.densities,
               "frontier_points": len(b.points), "swept_points": len(b.cloud)}
        print(io.dump_json(out, _out(args, "region_system_p3.json", man)))
        return EXIT_OK
    lam = _densities(args, scen)
    if args.budgets is not None:
        budget = io.parse_number_list(args.budgets, "--budgets", 3)[0 if kind == "C" else 1]
    elif scen.budgets is not None:
        budget = scen.budgets[0 if kind == "C" else 1]
    else:
        raise ConfigError("no budgets: pass --budgets or add a 'budgets' section to the scenario")
    if kind == "C":
        b = sweep_region_C(budget, lam.lambda_D, lam.lambda_DU, lam.lambda_W, cfg, n)
    else:
        b = sweep_region_D(budget, lam.lambda_C, lam.lambda_CU, lam.lambda_W, cfg, n)
    path = _out(args, f"region_{kind}.csv", man)
    write_region_csv(b, path)
    print(f"wrote {len(b.points)} points to {path}" + (f" ({len(b.skipped)} skipped)" if b.skipped else ""))
    return EXIT_OK


COMMANDS = {
    "throughput": cmd_throughput,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "optimize": cmd_optimize,
    "region": cmd_region,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="d2du", description="Cellular/D2D/Wi-Fi coexistence throughput tools")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--scenario", required=True, help="scenario JSON file")
        sp.add_argument("--densities", help="lambda_C,lambda_D,lambda_CU,lambda_DU[,lambda_W] in users/m^2")
        sp.add_argument("--budgets", help="lambda_all_C,lambda_all_D,lambda_W in users/m^2")
        sp.add_argument("--trials", type=int, default=1000)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--tol", type=float, default=None)
        sp.add_argument("--out-dir", default="out")
        sp.add_argument("--grid", default=None,
                        help="validate: name=v1,v2;...  region: points per axis (default 64)")
        sp.add_argument("--kind", choices=("C", "D", "system"), default="system")
        sp.add_argument("--kappa-l", type=float, default=None)
        sp.add_argument("--kappa-u", type=float, default=None)
    rp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    rp.add_argument("manifest")
    return p


def _check_args(args) -> None:
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    if not 0 <= args.seed < 2**64:
        raise ConfigError("--seed must be a 64-bit unsigned integer")
    if args.tol is not None and not (args.tol > 0 and math.isfinite(args.tol)):
        raise ConfigError("--tol must be positive")
    for name in ("kappa_l", "kappa_u"):
        v = getattr(args, name)
        if v is not None and not 0.0 <= v <= 1.0:
            raise ConfigError(f"--{name.replace('_', '-')} must lie in [0, 1], got {v}")
    args.grid_int = 64
    if args.command == "region" and args.grid is not None:
        try:
            args.grid_int = int(args.grid)
        except ValueError:
            raise ConfigError(f"--grid for region must be an integer, got {args.grid!r}") from None
        if args.grid_int < 2:
            raise ConfigError("--grid must be at least 2")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "replay":
        try:
            recorded = json.loads(Path(args.manifest).read_text())
            return main(list(recorded["argv"]))
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot replay {args.manifest}: {exc}", file=sys.stderr)
            return EXIT_INPUT
    man = None
    try:
        _check_args(args)
        scen = io.load_scenario(args.scenario)
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        man = io.RunManifest(args.command, argv, scen.path, scen.digest, args.seed, {})
        code = COMMANDS[args.command](args, scen, man)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_INPUT
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    if man is not None:
        man.finish(code)
        man.write(args.out_dir)
    return code


if __name__ == "__main__":
    sys.exit(main())
