"""Certification harness: runs every solver on one instance and records residuals."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import DEFAULT_OPTIONS, SolverOptions
from .domain import in_effective_domain, price_bounds, price_bounds_global
from .dual import conjugacy_check, k_factor, recover_primal_from_dual
from .errors import HabitatError, InfeasibleError
from .habit import (
    HabitSpec,
    budget_identity_residuals,
    from_auxiliary,
    gamma_of,
    pairing,
    subsistence_plan,
    to_auxiliary,
)
from .market import EventTree, density_from_conditionals, sample_conditionals, tree_to_dict
from .primal import brute_force_primal, solve_primal_auxiliary, solve_primal_wealth, superhedge
from .utility import UtilitySpec


@dataclass(frozen=True)
class Check:
    name: str
    anchor: str
    residual: float
    tolerance: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "anchor": self.anchor,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class Certificate:
    digest: str
    checks: tuple
    values: dict = field(default_factory=dict)

    @property
    def overall(self) -> str:
        return "pass" if all(c.passed for c in self.checks) else "fail"

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "digest": self.digest,
            "overall": self.overall,
            "checks": [c.to_dict() for c in self.checks],
            "values": self.values,
        }


def instance_digest(tree: EventTree, habit: HabitSpec, utility: UtilitySpec, x: float, z: float,
                    opts: SolverOptions = DEFAULT_OPTIONS) -> str:
    """Content hash of the solver inputs (custom utilities hash by family and parameters)."""
    payload = {
        "tree": tree_to_dict(tree),
        "alpha": [repr(float(a)) for a in habit.alpha],
        "delta": [repr(float(d)) for d in habit.delta],
        "utility": {"family": utility.family, **{k: repr(v) for k, v in sorted(utility.params.items())}},
        "x": repr(float(x)),
        "z": repr(float(z)),
        "options": opts.to_dict(),
    }
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


class _Recorder:
    def __init__(self):
        self.checks = []

    def add(self, name, anchor, residual, tolerance, passed=None, detail=""):
        residual = float(residual)
        if passed is None:
            passed = bool(np.isfinite(residual) and residual <= tolerance)
        self.checks.append(Check(name, anchor, residual, float(tolerance), bool(passed), detail))

    def fail(self, name, anchor, tolerance, exc):
        self.checks.append(Check(name, anchor, float("nan"), float(tolerance), False,
                                 f"{type(exc).__name__}: {exc}"))


def _probe(tree, habit, utility, x, z, bounds, opts):
    """Feasibility on each side of the effective-domain boundary."""
    if z > 0:
        edge = z * bounds.p_bar
        inside_x, outside_x = edge * (1 + opts.probe_offset), edge * (1 - opts.probe_offset)
    else:
        inside_x, outside_x = opts.probe_offset * max(abs(x), 1.0), -opts.probe_offset * max(abs(x), 1.0)
    outcome = {}
    for label, xp in (("inside", inside_x), ("outside", outside_x)):
        try:
            solve_primal_wealth(tree, habit, utility, xp, z, opts, bounds)
            outcome[label] = True
        except InfeasibleError:
            outcome[label] = False
    witness_cost = superhedge(tree, subsistence_plan(max(z, 0.0), tree, habit).values)[0] if z >= 0 else np.nan
    return inside_x, outside_x, outcome, witness_cost


def certify(tree: EventTree, habit: HabitSpec, utility: UtilitySpec, x: float, z: float,
            opts: SolverOptions = DEFAULT_OPTIONS, jobs: int = 1) -> Certificate:
    """Run the full battery of checks; sub-solve failures become failed checks."""
    rec = _Recorder()
    values = {}
    digest = instance_digest(tree, habit, utility, x, z, opts)
    try:
        bounds = price_bounds(tree, habit, opts)
    except HabitatError as exc:
        rec.fail("price-bounds", "super- and sub-replication of the subsistence stream", 0.0, exc)
        return Certificate(digest, tuple(rec.checks), values)
    values.update(p_bar=bounds.p_bar, p_low=bounds.p_low, replicable=bounds.replicable)

    try:
        g_hi, g_lo = price_bounds_global(tree, habit)
        rec.add("price-bounds-oracle", "backward induction agrees with one global linear program",
                max(_rel(g_hi, bounds.p_bar), _rel(g_lo, bounds.p_low)), 1e-9)
    except HabitatError as exc:
        rec.fail("price-bounds-oracle", "backward induction agrees with one global linear program", 1e-9, exc)

    feasible = in_effective_domain(x, z, bounds)
    if not feasible:
        try:
            solve_primal_wealth(tree, habit, utility, x, z, opts, bounds)
            rec.add("expected-infeasibility", "initial wealth must exceed z times the superhedging price",
                    1.0, 0.0, passed=False, detail="solver accepted an infeasible (x, z)")
        except InfeasibleError as exc:
            rec.add("expected-infeasibility", "initial wealth must exceed z times the superhedging price",
                    0.0, 0.0, passed=True, detail=str(exc))
        return Certificate(digest, tuple(rec.checks), values)

    rng = np.random.default_rng(opts.seed)
    anchor_budget = "pairing identities linking (c, Y) to (excess consumption, auxiliary dual)"
    wealth = aux = None
    try:
        wealth = solve_primal_wealth(tree, habit, utility, x, z, opts, bounds)
        values["wealth_value"] = wealth.value
        W = wealth.wealth
        c = wealth.consumption.values
        sf = 0.0
        for n in range(1, tree.n_nodes):
            p = int(tree.parent[n])
            expect = W[p] + wealth.strategy[p] @ (tree.prices[n] - tree.prices[p]) - c[p] * tree.node_dt[p]
            sf = max(sf, abs(W[n] - expect))
        rec.add("self-financing", "wealth evolves by trading gains minus consumption", sf, 1e-9)
        rec.add("wealth-nonnegative", "admissible wealth stays nonnegative", max(0.0, -W.min()), 1e-9)
        ct = to_auxiliary(c, z, habit, tree).values
        rec.add("excess-consumption", "consumption minus habit equals the auxiliary plan",
                float(np.abs(ct - wealth.auxiliary.values).max()), 1e-9)
    except HabitatError as exc:
        rec.fail("self-financing", "wealth evolves by trading gains minus consumption", 1e-9, exc)

    try:
        plan = wealth.consumption.values if wealth is not None else subsistence_plan(z, tree, habit).values
        worst = 0.0
        worst_k = 0.0
        k_ok = habit.drift_deterministic(tree)
        K = k_factor(tree, habit).K if k_ok else None
        for _ in range(opts.n_random_densities):
            Y = density_from_conditionals(tree, sample_conditionals(tree, rng)).Y
            r1, r2 = budget_identity_residuals(plan, z, Y, habit, tree)
            scale = max(1.0, abs(pairing(plan, Y, tree)))
            worst = max(worst, abs(r1) / scale, abs(r2) / scale)
            if k_ok:
                G = gamma_of(Y, habit, tree)
                mask = tree.consumption_mask
                worst_k = max(worst_k, float(np.abs(G[mask] - Y[mask] * K[mask]).max()))
        rec.add("budget-identity", anchor_budget, worst, 1e-10)
        if k_ok:
            rec.add("k-factor", "auxiliary dual factorises as density times the tail factor", worst_k, 1e-10)
        back = to_auxiliary(from_auxiliary(to_auxiliary(plan, z, habit, tree), z, habit, tree), z, habit, tree)
        rec.add("transform-round-trip", "consumption and excess consumption correspond one to one",
                float(np.abs(back.values - to_auxiliary(plan, z, habit, tree).values).max()), 1e-12)
    except HabitatError as exc:
        rec.fail("budget-identity", anchor_budget, 1e-10, exc)

    try:
        aux = solve_primal_auxiliary(tree, habit, utility, x, z, opts, bounds)
        values["auxiliary_value"] = aux.value
        if wealth is not None:
            rec.add("value-embedding", "habit problem value equals the auxiliary problem value",
                    abs(wealth.value - aux.value) / (1.0 + abs(aux.value)), 1e-6)
    except HabitatError as exc:
        rec.fail("value-embedding", "habit problem value equals the auxiliary problem value", 1e-6, exc)

    try:
        conj = conjugacy_check(tree, habit, utility, x, z, opts, jobs=jobs, bounds=bounds, primal=aux)
        values.update(y_star=conj.y_star, r_star=conj.r_star, dual_value=conj.dual_value, route=conj.route)
        rec.add("conjugate-duality", "primal value equals the infimum of dual value plus x y - z r",
                conj.relative_gap, 1e-4)
        rec.add("dual-point-in-cone", "dual minimiser lies in the open dual cone", 0.0 if conj.inside_cone else 1.0,
                0.0)
        ct_dual = recover_primal_from_dual(conj.dual, utility, tree).values
        nodes = tree.consumption_nodes
        gamma = conj.dual.gamma_star.gamma[nodes]
        ref = (wealth or conj.primal).auxiliary.values[nodes]
        marg = utility.at_times("marginal", tree.times[tree.time_index[nodes]], ref)
        rec.add("first-order-conditions", "optimal dual equals marginal utility of optimal excess consumption",
                float(np.max(np.abs(gamma - marg) / gamma)), 1e-5)
        r_star = conj.r_star if conj.r_star is not None else conj.y_star * bounds.p_bar
        target = x * conj.y_star - z * r_star
        rec.add("budget-product", "optimal pair exhausts the budget x y - z r",
                abs(pairing(ct_dual, conj.dual.gamma_star.gamma, tree) - target) / max(abs(target), 1e-300), 1e-6)
        rec.add("recovered-plan", "dual-recovered excess consumption matches the primal optimiser",
                float(np.max(np.abs(ct_dual[nodes] / ref - 1.0))), 1e-5)
    except HabitatError as exc:
        rec.fail("conjugate-duality", "primal value equals the infimum of dual value plus x y - z r", 1e-4, exc)

    try:
        inside_x, outside_x, outcome, witness = _probe(tree, habit, utility, x, z, bounds, opts)
        ok = outcome["inside"] and not outcome["outside"]
        if z > 0:
            ok = ok and witness <= inside_x and abs(witness - z * bounds.p_bar) <= 1e-9 * (1 + witness)
        rec.add("boundary-probe", "feasible exactly when x exceeds z times the superhedging price",
                0.0 if ok else 1.0, 0.0,
                detail=f"inside x={inside_x!r}: {outcome['inside']}, outside x={outside_x!r}: {outcome['outside']}")
    except HabitatError as exc:
        rec.fail("boundary-probe", "feasible exactly when x exceeds z times the superhedging price", 0.0, exc)
    return Certificate(digest, tuple(rec.checks), values)


def oracle_compare(tree: EventTree, habit: HabitSpec, utility: UtilitySpec, x: float, z: float,
                   resolution: float = DEFAULT_OPTIONS.brute_resolution, opts: SolverOptions = DEFAULT_OPTIONS) -> dict:
    """Solver value against exhaustive grid search on a tiny instance."""
    brute = brute_force_primal(tree, habit, utility, x, z, resolution=resolution, opts=opts)
    solved = solve_primal_wealth(tree, habit, utility, x, z, opts).value
    residual = abs(solved - brute)
    return {
        "solver_value": solved,
        "brute_force_value": brute,
        "residual": residual,
        "threshold": 2.0 * resolution,
        "passed": residual <= 2.0 * resolution,
    }


@dataclass
class ValueSurface:
    x_grid: np.ndarray
    z_grid: np.ndarray
    values: np.ndarray  # (len(z_grid), len(x_grid)); nan outside the effective domain
    increasing_in_x: list  # per z row
    nonincreasing_in_z: list  # per x column
    concave_x: list
    concave_z: list

    def to_dict(self) -> dict:
        return {
            "x_grid": self.x_grid.tolist(),
            "z_grid": self.z_grid.tolist(),
            "values": [[None if not np.isfinite(v) else float(v) for v in row] for row in self.values],
            "increasing_in_x": self.increasing_in_x,
            "nonincreasing_in_z": self.nonincreasing_in_z,
            "concave_x": self.concave_x,
            "concave_z": self.concave_z,
        }


def sweep_value_surface(tree: EventTree, habit: HabitSpec, utility: UtilitySpec, x_grid: Sequence[float],
                        z_grid: Sequence[float], opts: SolverOptions = DEFAULT_OPTIONS, jobs: int = 1,
                        tol: float = 1e-8) -> ValueSurface:
    """Value table with monotonicity and segment-midpoint concavity flags."""
    xs = np.asarray(x_grid, dtype=float)
    zs = np.asarray(z_grid, dtype=float)
    bounds = price_bounds(tree, habit, opts)

    def value(point):
        xv, zv = point
        if not in_effective_domain(xv, zv, bounds):
            return float("nan")
        return solve_primal_auxiliary(tree, habit, utility, xv, zv, opts, bounds).value

    def run(points):
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                return list(pool.map(value, points))
        return [value(p) for p in points]

    table = np.array(run([(xv, zv) for zv in zs for xv in xs])).reshape(zs.size, xs.size)
    mid_x = np.array(run([((xs[i] + xs[i + 1]) / 2, zv) for zv in zs for i in range(xs.size - 1)]))
    mid_x = mid_x.reshape(zs.size, max(xs.size - 1, 0))
    mid_z = np.array(run([(xv, (zs[j] + zs[j + 1]) / 2) for j in range(zs.size - 1) for xv in xs]))
    mid_z = mid_z.reshape(max(zs.size - 1, 0), xs.size)

    def fine(a):
        return a[np.isfinite(a)]

    inc_x = [bool(np.all(np.diff(fine(row)) > 0)) for row in table]
    noninc_z = [bool(np.all(np.diff(fine(col)) <= tol)) for col in table.T]
    concave_x = []
    for j in range(zs.size):
        avg = (table[j, :-1] + table[j, 1:]) / 2
        ok = np.isfinite(avg) & np.isfinite(mid_x[j])
        concave_x.append(bool(np.all(mid_x[j][ok] >= avg[ok] - tol)))
    concave_z = []
    for i in range(xs.size):
        avg = (table[:-1, i] + table[1:, i]) / 2
        ok = np.isfinite(avg) & np.isfinite(mid_z[:, i])
        concave_z.append(bool(np.all(mid_z[:, i][ok] >= avg[ok] - tol)))
    return ValueSurface(xs, zs, table, inc_x, noninc_z, concave_x, concave_z)
