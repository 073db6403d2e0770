"""Dual problems over martingale node masses and the conjugate search.

The dual variable is ``Gamma = y * auxiliary_dual(Y^Q)`` where ``Q`` ranges over
martingale node masses on consumption nodes (``Y^Q = Q / P``).  Because the
auxiliary dual is linear in ``Y``, ``Gamma = y * M @ Q`` for a fixed matrix
``M`` and the dual objective is convex in ``Q``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .config import DEFAULT_OPTIONS, SolverOptions
from .domain import PriceBounds, in_dual_cone, price_bounds
from .errors import PreconditionError, RoutingError, SolverFailure
from .habit import AuxiliaryDual, HabitSpec, Plan, gamma_of, weights
from .market import (
    DensityProcess,
    EventTree,
    conditionals_from_masses,
    mass_system,
    node_masses,
    node_polytope,
)
from .numerics import ConvexProgram, SolveStatus, solve_convex
from .primal import PrimalSolution, solve_primal_auxiliary
from .utility import UtilitySpec


@dataclass(frozen=True)
class KFactor:
    """Multiplier with ``auxiliary_dual(Y) = Y * K`` for every martingale density ``Y``."""

    K: np.ndarray  # per node
    per_epoch: Optional[np.ndarray]  # set when the factor depends on the epoch only


@dataclass(frozen=True)
class DualSolution:
    value: float
    gamma_star: AuxiliaryDual
    y: float
    r: Optional[float]
    masses: np.ndarray  # node masses Q on every node (zero at terminal nodes)
    conditionals: dict
    status: SolveStatus
    route: str = "two-dimensional"
    interior: bool = True
    price_multiplier: Optional[float] = None
    slope_y: float = float("nan")  # derivative of the value in y along fixed r / y

    def to_dict(self) -> dict:
        return {
            "route": self.route,
            "value": self.value,
            "y": self.y,
            "r": self.r,
            "gamma_star": self.gamma_star.gamma.tolist(),
            "conditionals": {str(k): self.conditionals[k].tolist() for k in sorted(self.conditionals)},
            "interior": self.interior,
            "status": self.status.status,
            "kkt_residual": self.status.kkt_residual,
        }


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def gamma_matrix(tree: EventTree, habit: HabitSpec) -> np.ndarray:
    """``M`` with ``auxiliary_dual(Q / P)[nodes] = M @ Q[nodes]`` on consumption nodes."""
    nodes = tree.consumption_nodes
    unit = np.zeros((tree.n_nodes, nodes.size))
    unit[nodes, np.arange(nodes.size)] = 1.0 / tree.path_prob[nodes]
    return gamma_of(unit, habit, tree)[nodes]


def k_factor(tree: EventTree, habit: HabitSpec) -> KFactor:
    """Tail factor ``1 + delta * sum (w_s / w_{k+1}) dt_s``.

    Needs ``delta - alpha`` to depend on the epoch only, so the weight ratios
    are deterministic.  A node-dependent ``delta`` gives a node-indexed factor.
    """
    if not habit.drift_deterministic(tree):
        raise PreconditionError("the K factor needs delta - alpha to depend on the epoch only")
    N = tree.horizon
    dts = tree.dts
    # growth per epoch along any path
    growth = np.array([1.0 + (habit.delta - habit.alpha)[tree.nodes_at(k)[0]] * dts[k] for k in range(N)])
    tail = np.zeros(N + 1)  # tail[k] = sum_{s>=k}^{N-1} (w_s / w_k) dt_s
    for k in range(N - 1, -1, -1):
        tail[k] = dts[k] + (growth[k] * tail[k + 1] if k + 1 <= N - 1 else 0.0)
    K = np.zeros(tree.n_nodes)
    for n in tree.consumption_nodes:
        k = tree.time_index[n]
        K[n] = 1.0 + habit.delta[n] * (tail[k + 1] if k + 1 <= N - 1 else 0.0)
    per_epoch = None
    if habit.is_deterministic(tree):
        per_epoch = np.array([K[tree.nodes_at(k)[0]] for k in range(N)])
    return KFactor(K, per_epoch)


def _objective_parts(tree: EventTree, utility: UtilitySpec, M: np.ndarray, y: float):
    nodes = tree.consumption_nodes
    mass = (tree.path_prob * tree.node_dt)[nodes]
    times = tree.times[tree.time_index[nodes]]

    def objective(q):
        g = y * (M @ q)
        if g.min() <= 0:
            return np.inf
        with np.errstate(all="ignore"):
            return float(mass @ utility.at_times("conjugate", times, g))

    def gradient(q):
        g = y * (M @ q)
        return y * (M.T @ (mass * utility.at_times("conjugate_slope", times, g)))

    def hessian(q):
        g = y * (M @ q)
        curv = mass * utility.at_times("curvature", times, g)
        return y * y * (M.T * curv) @ M

    return objective, gradient, hessian, mass, times


def _interior_masses(tree: EventTree, bounds: PriceBounds, price: Optional[float], w: np.ndarray):
    """Strictly positive node masses, mixed toward the extreme measures to hit ``price``."""
    nodes = tree.consumption_nodes
    centre = node_masses(tree, {int(n): node_polytope(tree, int(n)).barycenter() for n in nodes})
    if price is None:
        return centre
    cost = (w * tree.node_dt)
    p_c = float(cost @ centre)
    if price >= p_c:
        target, p_t = node_masses(tree, bounds.argmax), bounds.p_bar
    else:
        target, p_t = node_masses(tree, bounds.argmin), bounds.p_low
    if abs(p_t - p_c) <= 1e-15:
        return centre
    theta = (price - p_c) / (p_t - p_c)
    if not (0.0 <= theta < 1.0):
        raise PreconditionError(f"price {float(price)!r} is outside the open interval of martingale prices")
    return (1.0 - theta) * centre + theta * target


def _package(tree, habit, utility, M, y, r, q_nodes, status, route, price_multiplier, times, mass):
    nodes = tree.consumption_nodes
    Q = np.zeros(tree.n_nodes)
    Q[nodes] = q_nodes
    Y = np.zeros(tree.n_nodes)
    Y[nodes] = q_nodes / tree.path_prob[nodes]
    gamma = np.zeros(tree.n_nodes)
    gamma[nodes] = y * (M @ q_nodes)
    conditionals = conditionals_from_masses(tree, Q)
    interior = bool(np.all(q_nodes > 0))
    slope = float(mass @ (utility.at_times("conjugate_slope", times, gamma[nodes]) * (M @ q_nodes)))
    return DualSolution(
        value=float(mass @ utility.at_times("conjugate", times, gamma[nodes])),
        gamma_star=AuxiliaryDual(gamma, DensityProcess(Y, interior, conditionals)),
        y=float(y),
        r=None if r is None else float(r),
        masses=Q,
        conditionals=conditionals,
        status=status,
        route=route,
        interior=interior,
        price_multiplier=price_multiplier,
        slope_y=slope,
    )


# ---------------------------------------------------------------------------
# solves
# ---------------------------------------------------------------------------


def solve_dual(tree: EventTree, habit: HabitSpec, utility: UtilitySpec, y: float, r: float,
               opts: SolverOptions = DEFAULT_OPTIONS, bounds: Optional[PriceBounds] = None,
               start: Optional[np.ndarray] = None, pin_replicable: bool = False) -> DualSolution:
    """Minimise ``E sum V(t, Gamma) dt`` over ``Gamma = y * auxiliary_dual(Y^Q)`` with ``<w, Y^Q> = r / y``.

    ``pin_replicable`` runs the same program in a replicable market, where the
    pricing row is redundant; it exists to cross-check the one-dimensional route.
    ``start`` optionally supplies strictly positive node masses on every node.
    """
    bounds = bounds or price_bounds(tree, habit, opts)
    if bounds.replicable and not pin_replicable:
        raise RoutingError("replicable market: use solve_dual_1d")
    if bounds.replicable:
        if y <= 0 or abs(r / y - bounds.p_bar) > 1e-9 * (1.0 + bounds.p_bar):
            raise PreconditionError("pinned replicable solve needs y > 0 and r = y * p_bar")
    elif not in_dual_cone(y, r, bounds):
        raise PreconditionError(
            f"(y, r) = ({float(y)!r}, {float(r)!r}) is outside the open dual cone "
            f"(y > 0, {float(bounds.p_low)!r} y < r < {float(bounds.p_bar)!r} y)"
        )
    price = r / y
    w = weights(tree, habit).w
    nodes, A, b = mass_system(tree)
    cost = (w * tree.node_dt)[nodes]
    A2 = np.vstack([A, cost])
    b2 = np.concatenate([b, [price]])
    M = gamma_matrix(tree, habit)
    objective, gradient, hessian, mass, times = _objective_parts(tree, utility, M, y)
    m = nodes.size
    if start is None:
        q0 = _interior_masses(tree, bounds, None if bounds.replicable else price, w)[nodes]
    else:
        q0 = np.asarray(start, dtype=float)[nodes]
    cp = ConvexProgram(objective, gradient, m, hessian=hessian, A_eq=A2, b_eq=b2,
                       G=-np.eye(m), h=np.zeros(m), mu_start=opts.mu_start, mu_end=opts.mu_end)
    status = solve_convex(cp, q0, opts)
    if status.x is None:
        raise SolverFailure(f"dual barrier solve ended with status {status.status}", status.status)
    nu_price = float(status.dual[-1]) if status.dual is not None and status.dual.size else 0.0
    return _package(tree, habit, utility, M, y, r, np.maximum(status.x, 0.0), status,
                    "two-dimensional", nu_price, times, mass)


def solve_dual_1d(tree: EventTree, habit: HabitSpec, utility: UtilitySpec, y: float,
                  opts: SolverOptions = DEFAULT_OPTIONS, bounds: Optional[PriceBounds] = None,
                  start: Optional[np.ndarray] = None) -> DualSolution:
    """Replicable subsistence stream: minimise ``E sum V(t, y Y K) dt`` over all martingale densities."""
    bounds = bounds or price_bounds(tree, habit, opts)
    if not bounds.replicable:
        raise RoutingError("subsistence stream is not replicable: use solve_dual with (y, r)")
    if y <= 0:
        raise PreconditionError("y must be positive")
    nodes, A, b = mass_system(tree)
    if habit.drift_deterministic(tree):
        K = k_factor(tree, habit).K
        M = np.diag(K[nodes] / tree.path_prob[nodes])
        route = "one-dimensional (K factor)"
    else:
        M = gamma_matrix(tree, habit)
        route = "one-dimensional (general auxiliary dual)"
    objective, gradient, hessian, mass, times = _objective_parts(tree, utility, M, y)
    m = nodes.size
    q0 = (_interior_masses(tree, bounds, None, None) if start is None else np.asarray(start, dtype=float))[nodes]
    cp = ConvexProgram(objective, gradient, m, hessian=hessian, A_eq=np.array(A), b_eq=np.array(b),
                       G=-np.eye(m), h=np.zeros(m), mu_start=opts.mu_start, mu_end=opts.mu_end)
    status = solve_convex(cp, q0, opts)
    if status.x is None:
        raise SolverFailure(f"dual barrier solve ended with status {status.status}", status.status)
    return _package(tree, habit, utility, M, y, None, np.maximum(status.x, 0.0), status,
                    route, None, times, mass)


def recover_primal_from_dual(dual: DualSolution, utility: UtilitySpec, tree: EventTree) -> Plan:
    """Excess consumption ``I(t, Gamma*)`` on every consumption node."""
    nodes = tree.consumption_nodes
    g = dual.gamma_star.gamma[nodes]
    if g.min() <= 0:
        bad = int(nodes[int(np.argmin(g))])
        raise PreconditionError(f"node {bad}: dual optimizer vanishes, marginal utility would blow up")
    ct = np.zeros(tree.n_nodes)
    ct[nodes] = utility.at_times("inverse_marginal", tree.times[tree.time_index[nodes]], g)
    return Plan(ct, "auxiliary")


# ---------------------------------------------------------------------------
# conjugate search
# ---------------------------------------------------------------------------


@dataclass
class ConjugacyResult:
    primal_value: float
    dual_value: float  # min over the cone of v(y, r) + x y - z r
    gap: float
    relative_gap: float
    y_star: float
    r_star: Optional[float]
    route: str
    inside_cone: bool
    primal: PrimalSolution
    dual: DualSolution
    gradient_norm: float
    evaluations: int
    multiplier_y: float = float("nan")  # y implied by the primal budget multipliers
    multiplier_r: float = float("nan")
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "route": self.route,
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "gap": self.gap,
            "relative_gap": self.relative_gap,
            "y_star": self.y_star,
            "r_star": self.r_star,
            "inside_cone": self.inside_cone,
            "gradient_norm": self.gradient_norm,
            "evaluations": self.evaluations,
            "multiplier_y": self.multiplier_y,
            "multiplier_r": self.multiplier_r,
            "notes": list(self.notes),
        }


def _y_scale(tree: EventTree, utility: UtilitySpec, budget: float) -> float:
    return float(utility.marginal(0.0, max(budget, 1e-300) / tree.T))


def _bracket_root(fn, lo, hi, grow, limit=60):
    """Expand ``[lo, hi]`` geometrically (by ``grow``) until ``fn`` changes sign."""
    flo, fhi = fn(lo), fn(hi)
    for _ in range(limit):
        if np.sign(flo) != np.sign(fhi):
            return lo, hi
        if fhi < 0:
            lo, flo = hi, fhi
            hi = grow(hi, +1)
            fhi = fn(hi)
        else:
            hi, fhi = lo, flo
            lo = grow(lo, -1)
            flo = fn(lo)
    raise SolverFailure("could not bracket the conjugate first-order condition")


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def conjugacy_check(tree: EventTree, habit: HabitSpec, utility: UtilitySpec, x: float, z: float,
                    opts: SolverOptions = DEFAULT_OPTIONS, jobs: int = 1,
                    bounds: Optional[PriceBounds] = None,
                    primal: Optional[PrimalSolution] = None) -> ConjugacyResult:
    """Compare the primal value with ``inf v(y, r) + x y - z r`` found by grid search and polishing."""
    bounds = bounds or price_bounds(tree, habit, opts)
    primal = primal or solve_primal_auxiliary(tree, habit, utility, x, z, opts, bounds)
    coarse = opts.replace(mu_end=max(opts.mu_end, 1e-5))
    notes = []
    if bounds.replicable:
        result = _conjugacy_1d(tree, habit, utility, x, z, opts, coarse, bounds, primal, jobs, notes)
    else:
        result = _conjugacy_2d(tree, habit, utility, x, z, opts, coarse, bounds, primal, jobs, notes)
    lam = primal.budget_multipliers
    if lam is not None and primal.budget_gammas is not None:
        # the primal multipliers rebuild the dual point independently of the search
        nodes = tree.consumption_nodes
        result.multiplier_y = float(lam.sum())
        if not bounds.replicable:
            Ys = primal.budget_gammas  # generators of the budget constraints
            wt = weights(tree, habit).w_tilde
            mass = (tree.path_prob * tree.node_dt)[nodes]
            prices = (mass * wt[nodes]) @ Ys[nodes]
            result.multiplier_r = float(lam @ prices)
    return result


def _finish_result(primal, dual_obj, y, r, route, inside, dual, grad_norm, evals, notes):
    gap = abs(primal.value - dual_obj)
    return ConjugacyResult(
        primal_value=primal.value,
        dual_value=dual_obj,
        gap=gap,
        relative_gap=gap / max(1.0, abs(primal.value)),
        y_star=y,
        r_star=r,
        route=route,
        inside_cone=inside,
        primal=primal,
        dual=dual,
        gradient_norm=grad_norm,
        evaluations=evals,
        notes=notes,
    )


def _conjugacy_1d(tree, habit, utility, x, z, opts, coarse, bounds, primal, jobs, notes):
    budget = x - z * bounds.p_bar
    scale = _y_scale(tree, utility, budget)
    counter = [0]

    def solve(yv, o=opts):
        counter[0] += 1
        return solve_dual_1d(tree, habit, utility, yv, o, bounds)

    def total(sol):
        return sol.value + sol.y * budget

    ys = scale * np.logspace(-np.log10(opts.y_span), np.log10(opts.y_span), opts.grid_y)
    grid = _parallel_map(lambda yv: solve(yv, coarse), ys, jobs)
    k = int(np.argmin([total(s) for s in grid]))

    def slope(yv):
        return solve(yv).slope_y + budget

    lo = ys[max(k - 1, 0)]
    hi = ys[min(k + 1, ys.size - 1)]
    lo, hi = _bracket_root(slope, lo, hi, lambda v, sgn: v * (4.0 if sgn > 0 else 0.25))
    y_star = brentq(slope, lo, hi, xtol=1e-14 * hi, rtol=1e-13, maxiter=200)
    dual = solve(y_star)
    return _finish_result(primal, total(dual), y_star, y_star * bounds.p_bar, dual.route,
                          y_star > 0, dual, abs(dual.slope_y + budget), counter[0], notes)


def _conjugacy_2d(tree, habit, utility, x, z, opts, coarse, bounds, primal, jobs, notes):
    lo_p, hi_p = bounds.p_low, bounds.p_bar
    width = hi_p - lo_p
    budget = x - z * (lo_p + hi_p) / 2.0
    scale = _y_scale(tree, utility, max(budget, x - z * (hi_p if z >= 0 else lo_p)))
    counter = [0]
    cache = {}

    def solve(yv, pv, o=opts):
        key = (yv, pv, o.mu_end)
        if key not in cache:
            counter[0] += 1
            cache[key] = solve_dual(tree, habit, utility, yv, yv * pv, o, bounds)
        return cache[key]

    def total(sol):
        return sol.value + x * sol.y - z * sol.r

    ys = scale * np.logspace(-np.log10(opts.y_span), np.log10(opts.y_span), opts.grid_y)
    ps = lo_p + width * (np.arange(opts.grid_p) + 0.5) / opts.grid_p
    pairs = [(yv, pv) for yv in ys for pv in ps]
    grid = _parallel_map(lambda a: solve(a[0], a[1], coarse), pairs, jobs)
    k = int(np.argmin([total(s) for s in grid]))
    y, p = pairs[k]
    iy, ip = divmod(k, opts.grid_p)

    def d_y(yv, pv):
        return solve(yv, pv).slope_y + x - z * pv

    def d_p(yv, pv):
        # derivative of v(y, y p) + x y - z y p in p at fixed y
        return -solve(yv, pv).price_multiplier - z * yv

    eps = width * 1e-9
    step_y = ys[1] / ys[0]
    for _step in range(opts.polish_steps):
        y_old, p_old = y, p
        fy = lambda v: d_y(v, p)
        lo, hi = _bracket_root(fy, y / step_y, y * step_y,
                               lambda v, sgn: v * (step_y if sgn > 0 else 1.0 / step_y))
        y = brentq(fy, lo, hi, xtol=1e-15 * hi, rtol=1e-15, maxiter=200)
        fp = lambda v: d_p(y, v)
        a, b = lo_p + eps, hi_p - eps
        fa, fb = fp(a), fp(b)
        if np.sign(fa) != np.sign(fb):
            p = brentq(fp, a, b, xtol=1e-15 * max(1.0, hi_p), rtol=1e-15, maxiter=200)
        else:
            p = a if fa > 0 else b
            notes.append("price coordinate pinned to the cone boundary during polishing")
        if abs(y - y_old) <= 1e-13 * y and abs(p - p_old) <= 1e-13 * max(1.0, hi_p):
            break
    dual = solve(y, p)
    grad = float(np.hypot(d_y(y, p), d_p(y, p)))
    inside = bool(in_dual_cone(y, y * p, bounds))
    return _finish_result(primal, total(dual), y, y * p, dual.route, inside, dual, grad, counter[0], notes)
