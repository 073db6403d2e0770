"""Command-line front end: ``habitat <command> <scenario.scn> [options]``.

Every command builds one report dictionary.  The human table printed on
stdout is rendered from that same dictionary, and ``--out`` writes it as JSON.
Exit codes: 0 success, 1 solver or certification failure, 2 input or
feasibility error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .domain import price_bounds
from .dual import conjugacy_check, solve_dual, solve_dual_1d
from .errors import (ArbitrageError, ContractViolation, HabitatError, InfeasibleError,
                     PreconditionError, RoutingError, SolverFailure)
from .primal import solve_primal_auxiliary, solve_primal_wealth
from .scenario import Scenario, ScenarioError, parse_scenario
from .verify import certify, sweep_value_surface

SCHEMA_VERSION = 1
COMMANDS = ("price", "solve", "dual", "conjugacy", "verify", "sweep")

EXIT_OK, EXIT_FAILURE, EXIT_INPUT = 0, 1, 2


class _Failed(Exception):
    """Command finished but its own pass criterion failed (exit 1, report still written)."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_price(scn: Scenario, args) -> dict:
    bounds = price_bounds(scn.tree, scn.habit_spec, scn.options)
    return {"price_bounds": bounds.to_dict()}


def cmd_solve(scn: Scenario, args) -> dict:
    opts = scn.options
    bounds = price_bounds(scn.tree, scn.habit_spec, opts)
    out = {"price_bounds": {"p_bar": bounds.p_bar, "p_low": bounds.p_low, "replicable": bounds.replicable}}
    aux = solve_primal_auxiliary(scn.tree, scn.habit_spec, scn.utility_spec, scn.x, scn.z, opts, bounds)
    out["auxiliary"] = aux.to_dict()
    if scn.z >= 0:
        wealth = solve_primal_wealth(scn.tree, scn.habit_spec, scn.utility_spec, scn.x, scn.z, opts, bounds)
        out["wealth"] = wealth.to_dict()
        out["embedding_gap"] = abs(wealth.value - aux.value) / max(1.0, abs(aux.value))
    return out


def cmd_dual(scn: Scenario, args) -> dict:
    opts = scn.options
    bounds = price_bounds(scn.tree, scn.habit_spec, opts)
    y = 1.0 if args.y is None else args.y
    if bounds.replicable:
        if args.r is not None:
            raise RoutingError("replicable market: the dual is one-dimensional, drop --r")
        sol = solve_dual_1d(scn.tree, scn.habit_spec, scn.utility_spec, y, opts, bounds)
    else:
        r = y * 0.5 * (bounds.p_bar + bounds.p_low) if args.r is None else args.r
        sol = solve_dual(scn.tree, scn.habit_spec, scn.utility_spec, y, r, opts, bounds)
    return {"price_bounds": {"p_bar": bounds.p_bar, "p_low": bounds.p_low, "replicable": bounds.replicable},
            "dual": sol.to_dict()}


def cmd_conjugacy(scn: Scenario, args) -> dict:
    res = conjugacy_check(scn.tree, scn.habit_spec, scn.utility_spec, scn.x, scn.z, scn.options, args.jobs)
    tol = 1e-4
    out = {"conjugacy": res.to_dict(), "tolerance": tol, "passed": bool(res.relative_gap <= tol)}
    if not out["passed"]:
        raise _Failed(out)
    return out


def cmd_verify(scn: Scenario, args) -> dict:
    cert = certify(scn.tree, scn.habit_spec, scn.utility_spec, scn.x, scn.z, scn.options, args.jobs)
    out = {"certificate": cert.to_dict()}
    if cert.overall != "pass":
        raise _Failed(out)
    return out


def _grid(text: Optional[str], centre: float, lo_edge: float) -> list:
    if text:
        return [float(v) for v in text.split(",")]
    return [lo_edge + (centre - lo_edge) * f for f in (0.5, 1.0, 1.5, 2.0)]


def cmd_sweep(scn: Scenario, args) -> dict:
    opts = scn.options
    bounds = price_bounds(scn.tree, scn.habit_spec, opts)
    z_grid = _grid(args.z_grid, scn.z, 0.0)
    x_grid = _grid(args.x_grid, scn.x, max(z_grid) * bounds.p_bar)
    surf = sweep_value_surface(scn.tree, scn.habit_spec, scn.utility_spec, x_grid, z_grid, opts, args.jobs)
    return {"sweep": surf.to_dict()}


HANDLERS = {
    "price": cmd_price,
    "solve": cmd_solve,
    "dual": cmd_dual,
    "conjugacy": cmd_conjugacy,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return str(v).lower() if isinstance(v, bool) else "-"
    if isinstance(v, float):
        return f"{v:.10g}"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _rows(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _rows(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list) and obj and all(isinstance(x, dict) for x in obj):
        for i, v in enumerate(obj):
            label = v.get("name", str(i))
            yield from _rows(v, f"{prefix}[{label}]")
    else:
        yield prefix, _fmt(obj)


def render_table(report: dict) -> str:
    rows = list(_rows(report))
    width = max((len(k) for k, _ in rows), default=0)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="habitat",
        description="Habit-formation utility maximization on finite event trees.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("scenario", help="scenario file (JSON)")
    parser.add_argument("--out", type=Path, help="write the structured report to this JSON file")
    parser.add_argument("--jobs", type=int, default=1, help="worker threads for grid searches (default 1)")
    parser.add_argument("--tol-override", action="append", default=[], metavar="KEY=VALUE",
                        help="override a solver option; repeatable")
    parser.add_argument("--y", type=float, help="dual: wealth multiplier y (default 1)")
    parser.add_argument("--r", type=float, help="dual: habit multiplier r (default mid-cone)")
    parser.add_argument("--x-grid", help="sweep: comma-separated initial wealths")
    parser.add_argument("--z-grid", help="sweep: comma-separated initial habit levels")
    return parser


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep:
            raise ContractViolation(f"--tol-override expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    report = {"schema_version": SCHEMA_VERSION, "command": args.command, "scenario": str(args.scenario)}
    code = EXIT_OK
    try:
        if args.jobs < 1:
            raise ContractViolation("--jobs must be at least 1")
        scn = parse_scenario(args.scenario)
        if args.tol_override:
            try:
                scn.options = scn.options.with_overrides(_overrides(args.tol_override))
            except (KeyError, ValueError) as exc:
                raise ContractViolation(f"--tol-override: {exc}") from None
        report["initial"] = {"x": scn.x, "z": scn.z}
        report.update(HANDLERS[args.command](scn, args))
        report["status"] = "ok"
    except _Failed as exc:
        report.update(exc.args[0])
        report["status"] = "failed"
        code = EXIT_FAILURE
    except InfeasibleError as exc:
        report.update(status="infeasible", error=str(exc), certificate=exc.certificate)
        code = EXIT_INPUT
    except ArbitrageError as exc:
        report.update(status="input-error", error=str(exc), node=exc.node, portfolio=exc.portfolio)
        code = EXIT_INPUT
    except ScenarioError as exc:
        report.update(status="input-error", error="invalid scenario", violations=exc.violations)
        code = EXIT_INPUT
    except (ContractViolation, PreconditionError, RoutingError) as exc:
        report.update(status="input-error", error=str(exc))
        code = EXIT_INPUT
    except SolverFailure as exc:
        report.update(status="solver-failure", error=str(exc), solver_status=exc.status)
        code = EXIT_FAILURE
    except HabitatError as exc:
        report.update(status="failed", error=str(exc))
        code = EXIT_FAILURE
    report = _jsonable(report)
    if args.out is not None:
        args.out.write_text(json.dumps(report, indent=2) + "\n")
    print(render_table(report), file=stdout)
    if code != EXIT_OK:
        print(f"habitat {args.command}: {report['status']}: {report.get('error', 'checks failed')}", file=stderr)
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
