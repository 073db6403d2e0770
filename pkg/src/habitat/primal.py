"""Primal consumption-investment solvers.

Two formulations of the same problem:

* wealth form -- consumption and a trading strategy at every node, wealth
  kept nonnegative and consumption kept above the habit level;
* auxiliary form -- only the excess consumption ``c_tilde = c - Z``, subject
  to one linear budget constraint per extreme auxiliary dual element.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import DEFAULT_OPTIONS, SolverOptions
from .domain import PriceBounds, extreme_value, price_bounds
from .errors import InfeasibleError, PreconditionError, SolverFailure
from .habit import (
    HabitSpec,
    Plan,
    from_auxiliary,
    gamma_of,
    habit_matrix,
    habit_path,
    weights,
)
from .market import EventTree, density_from_conditionals, vertex_densities
from .numerics import ConvexProgram, LinearProgram, SolveStatus, solve_convex, solve_lp
from .utility import UtilitySpec


@dataclass(frozen=True)
class PrimalSolution:
    value: float
    consumption: Plan
    auxiliary: Plan
    habit_level: np.ndarray
    status: SolveStatus
    wealth: Optional[np.ndarray] = None
    strategy: Optional[np.ndarray] = None
    formulation: str = "wealth"
    abstract: bool = False
    budget_gammas: Optional[np.ndarray] = None  # (n_nodes, K) constraint generators
    budget_multipliers: Optional[np.ndarray] = None
    binding: tuple = ()
    notes: tuple = ()

    def to_dict(self) -> dict:
        out = {
            "formulation": self.formulation,
            "value": self.value,
            "consumption": self.consumption.values.tolist(),
            "auxiliary": self.auxiliary.values.tolist(),
            "habit_level": self.habit_level.tolist(),
            "status": self.status.status,
            "kkt_residual": self.status.kkt_residual,
            "abstract": self.abstract,
            "binding": list(self.binding),
            "notes": list(self.notes),
        }
        if self.wealth is not None:
            out["wealth"] = self.wealth.tolist()
        if self.strategy is not None:
            out["strategy"] = self.strategy.tolist()
        if self.budget_multipliers is not None:
            out["budget_multipliers"] = self.budget_multipliers.tolist()
        return out


def _node_times(tree: EventTree) -> np.ndarray:
    return tree.times[tree.time_index]


def expected_utility(tree: EventTree, utility: UtilitySpec, c_tilde: np.ndarray) -> float:
    """``sum P dt U(t, c_tilde)`` over consumption nodes."""
    nodes = tree.consumption_nodes
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = utility.at_times("utility", _node_times(tree)[nodes], c_tilde[nodes])
    return float(np.sum((tree.path_prob * tree.node_dt)[nodes] * vals))


def _infeasible(x: float, z: float, bounds: PriceBounds, edge: float, which: str) -> InfeasibleError:
    measure = bounds.argmax if which == "p_bar" else bounds.argmin
    return InfeasibleError(
        f"(x, z) = ({float(x)!r}, {float(z)!r}) admits no plan: need x > z * {which} = {float(edge)!r}",
        certificate={
            "x": x,
            "z": z,
            "bound": which,
            "threshold": edge,
            "shortfall": edge - x,
            "attaining_measure": {
                str(k): measure[k].tolist() for k in sorted(measure)
            },
        },
    )


def _budget_guard(x: float, z: float, bounds: PriceBounds, allow_negative_habit: bool):
    if z < 0 and not allow_negative_habit:
        raise InfeasibleError(
            f"initial habit z = {float(z)!r} is negative; only the auxiliary problem accepts it",
            certificate={"x": x, "z": z, "bound": "z >= 0"},
        )
    if z == 0:
        if x <= 0:
            raise InfeasibleError(
                f"initial wealth x = {float(x)!r} must be positive",
                certificate={"x": x, "z": z, "bound": "x > 0", "threshold": 0.0, "shortfall": -x},
            )
        return x
    edge = z * (bounds.p_bar if z > 0 else bounds.p_low)
    if x <= edge:
        raise _infeasible(x, z, bounds, edge, "p_bar" if z > 0 else "p_low")
    return x - edge


def _wrap_objective(tree, utility, nodes, transform, offset):
    """Negative expected utility of ``c_tilde = transform @ v + offset`` with derivatives."""
    times = _node_times(tree)[nodes]
    mass = (tree.path_prob * tree.node_dt)[nodes]

    def c_tilde(v):
        return transform @ v + offset

    def objective(v):
        ct = c_tilde(v)
        if ct.min() <= 0:
            return np.inf
        return -float(mass @ utility.at_times("utility", times, ct))

    def gradient(v):
        ct = c_tilde(v)
        return -transform.T @ (mass * utility.at_times("marginal", times, ct))

    def hessian(v):
        ct = c_tilde(v)
        curv = -mass * utility.at_times("marginal_slope", times, ct)
        return (transform.T * curv) @ transform

    return objective, gradient, hessian, c_tilde


# ---------------------------------------------------------------------------
# wealth form
# ---------------------------------------------------------------------------


def _hedge(tree: EventTree, node: int, targets: np.ndarray):
    """Cheapest ``(cash, H)`` with ``cash + H . dS_j >= targets_j`` for each child."""
    ch = list(tree.children(node))
    d, m = tree.n_assets, len(ch)
    dS = tree.prices[ch] - tree.prices[node]
    A = np.hstack([np.ones((m, 1)), dS, -np.eye(m)])
    cost = np.zeros(1 + d + m)
    cost[0] = 1.0
    lower = np.concatenate([np.full(1 + d, -np.inf), np.zeros(m)])
    res = solve_lp(LinearProgram(cost, A, targets, lower=lower))
    if not res.optimal:
        raise SolverFailure(f"node {node}: hedging LP ended with status {res.status}", res.status)
    return res.x[0], res.x[1:1 + d]


def superhedge(tree: EventTree, stream: np.ndarray):
    """Superreplicating price and strategy of a consumption-rate stream."""
    value, _ = extreme_value(tree, stream, "max")
    H = np.zeros((tree.n_nodes, tree.n_assets))
    for n in tree.consumption_nodes:
        n = int(n)
        _, H[n] = _hedge(tree, n, value[list(tree.children(n))])
    return float(value[0]), H


def wealth_path(tree: EventTree, x: float, c: np.ndarray, H: np.ndarray) -> np.ndarray:
    W = np.zeros(tree.n_nodes)
    W[0] = x
    for k in range(1, tree.horizon + 1):
        nodes = tree.nodes_at(k)
        par = tree.parent[nodes]
        gains = np.einsum("ij,ij->i", H[par], tree.prices[nodes] - tree.prices[par])
        W[nodes] = W[par] - c[par] * tree.node_dt[par] + gains
    return W


def solve_primal_wealth(tree: EventTree, habit: HabitSpec, utility: UtilitySpec, x: float, z: float,
                        opts: SolverOptions = DEFAULT_OPTIONS, bounds: Optional[PriceBounds] = None) -> PrimalSolution:
    """Maximise expected utility of ``c - Z`` over consumption and trading."""
    bounds = bounds or price_bounds(tree, habit, opts)
    _budget_guard(x, z, bounds, allow_negative_habit=False)
    wp = weights(tree, habit)
    nodes = tree.consumption_nodes
    m, d = nodes.size, tree.n_assets
    nv = m + m * d
    col = {int(n): i for i, n in enumerate(nodes)}

    # c_tilde = (I - L) c - z w_tilde on consumption nodes
    L = habit_matrix(tree, habit)[nodes]
    transform = np.zeros((m, nv))
    transform[:, :m] = np.eye(m) - L
    offset = -z * wp.w_tilde[nodes]

    # W(node) = x + Mw @ v
    Mw = np.zeros((tree.n_nodes, nv))
    for k in range(1, tree.horizon + 1):
        for n in tree.nodes_at(k):
            p = int(tree.parent[n])
            i = col[p]
            Mw[n] = Mw[p]
            Mw[n, i] -= tree.node_dt[p]
            Mw[n, m + i * d:m + (i + 1) * d] += tree.prices[n] - tree.prices[p]
    G = np.vstack([-transform, -Mw[1:]])
    h = np.concatenate([offset, np.full(tree.n_nodes - 1, x)])

    # interior start: subsistence plus a uniform surplus, superhedged
    unit = from_auxiliary(np.where(tree.consumption_mask, 1.0, 0.0), 0.0, habit, tree).values
    unit_price, _ = superhedge(tree, unit)
    surplus = (x - z * bounds.p_bar) / (2.0 * unit_price) if z > 0 else x / (2.0 * unit_price)
    c0 = from_auxiliary(np.where(tree.consumption_mask, surplus, 0.0), z, habit, tree).values
    _, H0 = superhedge(tree, c0)
    v0 = np.concatenate([c0[nodes], H0[nodes].ravel()])

    objective, gradient, hessian, _ = _wrap_objective(tree, utility, nodes, transform, offset)
    cp = ConvexProgram(objective, gradient, nv, hessian=hessian, G=G, h=h,
                       mu_start=opts.mu_start, mu_end=opts.mu_end)
    status = solve_convex(cp, v0, opts)
    if status.x is None:
        raise SolverFailure(f"wealth-form barrier solve ended with status {status.status}", status.status)
    v = status.x
    c = np.zeros(tree.n_nodes)
    c[nodes] = v[:m]
    H = np.zeros((tree.n_nodes, d))
    H[nodes] = v[m:].reshape(m, d)
    Z = habit_path(c, z, habit, tree)
    ct = np.where(tree.consumption_mask, np.maximum(c - Z, 0.0), 0.0)
    W = wealth_path(tree, x, c, H)
    binding = tuple(int(n) for n in range(1, tree.n_nodes) if W[n] <= 1e-7 * (1.0 + x))
    return PrimalSolution(
        value=expected_utility(tree, utility, ct),
        consumption=Plan(c),
        auxiliary=Plan(ct, "auxiliary"),
        habit_level=Z,
        status=status,
        wealth=W,
        strategy=H,
        formulation="wealth",
        binding=binding,
    )


# ---------------------------------------------------------------------------
# auxiliary form
# ---------------------------------------------------------------------------


def _most_expensive_density(tree: EventTree, stream: np.ndarray):
    value, chosen = extreme_value(tree, stream, "max")
    return float(value[0]), density_from_conditionals(tree, chosen).Y


def solve_primal_auxiliary(tree: EventTree, habit: HabitSpec, utility: UtilitySpec, x: float, z: float,
                           opts: SolverOptions = DEFAULT_OPTIONS, bounds: Optional[PriceBounds] = None) -> PrimalSolution:
    """Maximise expected utility of ``c_tilde >= 0`` under the auxiliary budget constraints.

    The constraint family is generated by the extreme martingale densities;
    beyond ``opts.vertex_limit`` generators the most violated constraint is
    added iteratively instead.
    """
    bounds = bounds or price_bounds(tree, habit, opts)
    slack = _budget_guard(x, z, bounds, allow_negative_habit=True)
    wp = weights(tree, habit)
    nodes = tree.consumption_nodes
    m = nodes.size
    mass = (tree.path_prob * tree.node_dt)[nodes]
    Ys = vertex_densities(tree, opts.vertex_limit)
    generated = Ys is None
    if generated:
        seeds = [density_from_conditionals(tree, bounds.argmax).Y,
                 density_from_conditionals(tree, bounds.argmin).Y]
        Ys = np.column_stack(seeds)
    notes = []
    if z < 0:
        notes.append("negative initial habit: abstract extension without a consumption-plan counterpart")

    objective, gradient, hessian, _ = _wrap_objective(tree, utility, nodes, np.eye(m), np.zeros(m))
    for _round in range(200):
        gammas = gamma_of(Ys, habit, tree)
        rows = (mass[:, None] * gammas[nodes]).T
        rhs = x - z * (wp.w_tilde[nodes] * mass) @ gammas[nodes]
        G = np.vstack([rows, -np.eye(m)])
        h = np.concatenate([rhs, np.zeros(m)])
        start = np.full(m, slack / (2.0 * rows.sum(axis=1).max()))
        cp = ConvexProgram(objective, gradient, m, hessian=hessian, G=G, h=h,
                           mu_start=opts.mu_start, mu_end=opts.mu_end)
        status = solve_convex(cp, start, opts)
        if status.x is None:
            raise SolverFailure(f"auxiliary barrier solve ended with status {status.status}", status.status)
        ct = np.zeros(tree.n_nodes)
        ct[nodes] = status.x
        if not generated:
            break
        c = from_auxiliary(ct, z, habit, tree).values
        price, Y_new = _most_expensive_density(tree, c)
        if price <= x + opts.lp_feasibility_tol * (1.0 + abs(x)):
            break
        Ys = np.column_stack([Ys, Y_new])
    else:
        raise SolverFailure("constraint generation did not converge")
    if generated:
        notes.append(f"constraint generation used {Ys.shape[1]} budget generators")

    lam = status.ineq_dual[: Ys.shape[1]]
    slacks = rhs - rows @ status.x
    binding = tuple(int(i) for i in np.flatnonzero(slacks <= 1e-7 * (1.0 + abs(x))))
    c = from_auxiliary(ct, z, habit, tree).values
    Z = c - ct
    return PrimalSolution(
        value=expected_utility(tree, utility, ct),
        consumption=Plan(c),
        auxiliary=Plan(np.maximum(ct, 0.0), "auxiliary"),
        habit_level=np.where(tree.consumption_mask, Z, 0.0),
        status=status,
        formulation="auxiliary",
        abstract=z < 0,
        budget_gammas=gammas,
        budget_multipliers=lam,
        binding=binding,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# exhaustive oracle
# ---------------------------------------------------------------------------


def brute_force_primal(tree: EventTree, habit: HabitSpec, utility: UtilitySpec, x: float, z: float,
                       resolution: float = DEFAULT_OPTIONS.brute_resolution, max_points: int = 200_000,
                       opts: SolverOptions = DEFAULT_OPTIONS) -> float:
    """Grid search over ``c_tilde`` for tiny trees.

    The last consumption node takes the largest value the budget constraints
    allow; the other coordinates are gridded, and the grid is zoomed twice
    around the incumbent.  Budget constraints come from all extreme densities.
    """
    nodes = tree.consumption_nodes
    m = nodes.size
    if m > 12:
        raise PreconditionError(f"brute-force oracle is limited to 12 consumption nodes (got {m})")
    Ys = vertex_densities(tree, opts.vertex_limit)
    if Ys is None:
        raise PreconditionError("too many extreme densities for the brute-force oracle")
    wp = weights(tree, habit)
    mass = (tree.path_prob * tree.node_dt)[nodes]
    gammas = gamma_of(Ys, habit, tree)[nodes]
    rows = (mass[:, None] * gammas).T  # (K, m)
    rhs = x - z * rows @ wp.w_tilde[nodes]
    if rhs.min() <= 0:
        raise InfeasibleError("empty feasible grid: every budget leaves no room above subsistence",
                              certificate={"x": x, "z": z, "min_budget": float(rhs.min())})
    times = _node_times(tree)[nodes]
    upper = np.array([np.min(rhs[rows[:, i] > 0] / rows[rows[:, i] > 0, i]) for i in range(m)])

    def evaluate(points):
        # points: (P, m-1); returns values and the completed plans
        used = rows[:, :-1] @ points.T if m > 1 else np.zeros((rows.shape[0], points.shape[0]))
        room = (rhs[:, None] - used)
        last_rows = rows[:, -1]
        pos = last_rows > 0
        if not np.all(room[~pos] >= 0):
            ok_extra = np.all(room[~pos] >= 0, axis=0)
        else:
            ok_extra = np.ones(points.shape[0], dtype=bool)
        last = np.min(room[pos] / last_rows[pos][:, None], axis=0)
        full = np.column_stack([points, last])
        ok = ok_extra & np.all(full > 0, axis=1)
        vals = np.full(points.shape[0], -np.inf)
        if ok.any():
            with np.errstate(all="ignore"):
                u = np.column_stack([utility.at_times("utility", np.full(ok.sum(), times[i]), full[ok, i])
                                     for i in range(m)])
            vals[ok] = u @ mass
        return vals, full

    if m == 1:
        vals, _ = evaluate(np.zeros((1, 0)))
        return float(vals[0])
    dims = m - 1
    per_dim = max(5, int(max_points ** (1.0 / dims)))
    lo = np.zeros(dims)
    hi = upper[:-1].copy()
    best = -np.inf
    for _level in range(3):
        axes = [np.linspace(lo[i], hi[i], per_dim) for i in range(dims)]
        axes = [a[a > 0] if a[0] <= 0 else a for a in axes]
        grid = np.array(list(itertools.product(*axes)))
        vals, _ = evaluate(grid)
        k = int(np.argmax(vals))
        if vals[k] == -np.inf:
            raise InfeasibleError("empty feasible grid", certificate={"x": x, "z": z})
        best = max(best, float(vals[k]))
        centre = grid[k]
        width = np.array([(a[-1] - a[0]) / max(a.size - 1, 1) for a in axes])
        lo = np.maximum(centre - 2 * width, 0.0)
        hi = np.minimum(centre + 2 * width, upper[:-1])
        if np.all(width <= resolution * 1e-3):
            break
    return best
