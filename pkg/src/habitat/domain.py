"""Super- and sub-replication prices of the subsistence stream and the feasible cones."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_OPTIONS, SolverOptions
from .errors import PreconditionError, RoutingError, SolverFailure
from .habit import HabitSpec, weights
from .market import EventTree, mass_system, node_polytope
from .numerics import LinearProgram, solve_lp


@dataclass(frozen=True)
class PriceBounds:
    """Largest and smallest martingale value of the subsistence weights ``w``."""

    p_bar: float
    p_low: float
    replicable: bool
    tolerance: float = DEFAULT_OPTIONS.replicable_tol
    argmax: dict = field(default_factory=dict)  # node -> attaining conditional measure
    argmin: dict = field(default_factory=dict)
    argmax_interior: bool = True
    argmin_interior: bool = True

    def to_dict(self) -> dict:
        return {
            "p_bar": self.p_bar,
            "p_low": self.p_low,
            "replicable": self.replicable,
            "replicable_tolerance": self.tolerance,
            "argmax": {str(k): self.argmax[k].tolist() for k in sorted(self.argmax)},
            "argmin": {str(k): self.argmin[k].tolist() for k in sorted(self.argmin)},
            "argmax_interior": self.argmax_interior,
            "argmin_interior": self.argmin_interior,
        }


@dataclass(frozen=True)
class DomainQuery:
    x: float
    z: float
    y: float = float("nan")
    r: float = float("nan")


def extreme_value(tree: EventTree, payoff: np.ndarray, sense: str):
    """Backward induction of ``max`` (or ``min``) martingale value of a rate stream.

    ``payoff`` holds the per-node rate; the value of a node is
    ``payoff * dt`` plus the extreme conditional expectation of its children.
    Returns ``(value_per_node, attaining_conditionals)``.
    """
    value = np.zeros(tree.n_nodes)
    chosen = {}
    dt = tree.node_dt
    for k in range(tree.horizon - 1, -1, -1):
        for n in tree.nodes_at(k):
            n = int(n)
            poly = node_polytope(tree, n)
            cont = value[list(poly.children)]
            res = solve_lp(LinearProgram(cont, poly.A, poly.b, sense=sense))
            if not res.optimal:
                raise SolverFailure(f"node {n}: conditional LP ended with status {res.status}", res.status)
            q = np.maximum(res.x, 0.0)
            chosen[n] = q
            value[n] = payoff[n] * dt[n] + float(q @ cont)
    return value, chosen


def price_bounds(tree: EventTree, habit: HabitSpec, opts: SolverOptions = DEFAULT_OPTIONS) -> PriceBounds:
    w = weights(tree, habit).w
    hi, arg_hi = extreme_value(tree, w, "max")
    lo, arg_lo = extreme_value(tree, w, "min")
    p_bar, p_low = float(hi[0]), float(lo[0])
    replicable = p_bar - p_low <= opts.replicable_tol * (1.0 + abs(p_bar))
    relevant = [n for n in arg_hi if tree.time_index[n] <= tree.horizon - 2]
    return PriceBounds(
        p_bar=p_bar,
        p_low=min(p_low, p_bar),
        replicable=bool(replicable),
        tolerance=opts.replicable_tol,
        argmax=arg_hi,
        argmin=arg_lo,
        argmax_interior=all(arg_hi[n].min() > 0 for n in relevant),
        argmin_interior=all(arg_lo[n].min() > 0 for n in relevant),
    )


def price_bounds_global(tree: EventTree, habit: HabitSpec):
    """Same bounds from one LP over all node masses at once (an independent route)."""
    nodes, A, b = mass_system(tree)
    w = weights(tree, habit).w
    cost = (w * tree.node_dt)[nodes]
    out = []
    for sense in ("max", "min"):
        res = solve_lp(LinearProgram(cost, np.array(A), np.array(b), sense=sense))
        if not res.optimal:
            raise SolverFailure(f"global pricing LP ended with status {res.status}", res.status)
        out.append(float(res.value))
    return tuple(out)


def in_effective_domain(x: float, z: float, bounds: PriceBounds, closure: bool = False) -> bool:
    """Initial wealth and habit pairs for which some plan is feasible."""
    if z == 0:
        return x >= 0 if closure else x > 0
    if z < 0:
        return False
    return x >= z * bounds.p_bar if closure else x > z * bounds.p_bar


def in_enlarged_domain(x: float, z: float, bounds: PriceBounds, closure: bool = False) -> bool:
    """Convex cone that also admits negative initial habit."""
    edge = bounds.p_bar if z >= 0 else bounds.p_low
    return x >= edge * z if closure else x > edge * z


def in_dual_cone(y: float, r: float, bounds: PriceBounds, closure: bool = False) -> bool:
    if bounds.replicable:
        raise RoutingError(
            "the subsistence stream is replicable: the dual cone is degenerate, "
            "use the one-dimensional dual instead"
        )
    if closure:
        return y >= 0 and bounds.p_low * y <= r <= bounds.p_bar * y
    return y > 0 and bounds.p_low * y < r < bounds.p_bar * y


def require_effective_domain(x: float, z: float, bounds: PriceBounds) -> None:
    if not in_effective_domain(x, z, bounds):
        raise PreconditionError(
            f"(x, z) = ({float(x)!r}, {float(z)!r}) is outside the effective domain "
            f"(need x > z * {float(bounds.p_bar)!r}, or z = 0 and x > 0)"
        )
