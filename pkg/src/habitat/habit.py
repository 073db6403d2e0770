"""Addictive habit formation on an event tree.

Consumption ``c`` is a rate held over ``[t_k, t_{k+1})`` and decided at each
node of epochs ``0 .. N-1``; terminal nodes carry no consumption.  All
node-indexed arrays in this module have one entry per tree node; entries at
terminal nodes are ignored unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .config import DEFAULT_OPTIONS
from .errors import ContractViolation, PreconditionError
from .market import DensityProcess, EventTree


@dataclass(frozen=True)
class HabitSpec:
    """Persistence rate ``alpha`` and intensity ``delta``, one value per node."""

    alpha: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).ravel()
        d = np.asarray(self.delta, dtype=float).ravel()
        if a.shape != d.shape:
            raise ContractViolation("alpha and delta need the same length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(d))):
            raise ContractViolation("alpha and delta must be finite")
        if a.min(initial=0.0) < 0 or d.min(initial=0.0) < 0:
            raise ContractViolation("alpha and delta must be nonnegative")
        a.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "delta", d)

    @classmethod
    def constant(cls, tree: EventTree, alpha: float, delta: float) -> "HabitSpec":
        n = tree.n_nodes
        return cls(np.full(n, float(alpha)), np.full(n, float(delta)))

    @classmethod
    def per_epoch(cls, tree: EventTree, alpha, delta) -> "HabitSpec":
        """Deterministic paths: one value per consumption epoch ``0 .. N-1``."""
        alpha = np.asarray(alpha, dtype=float)
        delta = np.asarray(delta, dtype=float)
        if alpha.size != tree.horizon or delta.size != tree.horizon:
            raise ContractViolation(f"per-epoch habit tables need {tree.horizon} entries")
        k = np.minimum(tree.time_index, tree.horizon - 1)
        return cls(alpha[k], delta[k])

    def check_tree(self, tree: EventTree) -> "HabitSpec":
        if self.alpha.size != tree.n_nodes:
            raise ContractViolation(
                f"habit tables have {self.alpha.size} entries, tree has {tree.n_nodes} nodes"
            )
        return self

    def is_deterministic(self, tree: EventTree) -> bool:
        """True when alpha and delta depend on the epoch only."""
        return _epoch_constant(tree, self.alpha) and _epoch_constant(tree, self.delta)

    def drift_deterministic(self, tree: EventTree) -> bool:
        """True when ``delta - alpha`` depends on the epoch only."""
        return _epoch_constant(tree, self.delta - self.alpha)


def _epoch_constant(tree: EventTree, values: np.ndarray, tol: float = 1e-14) -> bool:
    for k in range(tree.horizon):
        v = values[tree.nodes_at(k)]
        if v.max() - v.min() > tol * (1.0 + np.abs(v).max()):
            return False
    return True


@dataclass(frozen=True)
class Plan:
    """Node-indexed consumption (``kind='consumption'``) or auxiliary plan."""

    values: np.ndarray
    kind: str = "consumption"

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if self.kind not in ("consumption", "auxiliary"):
            raise ContractViolation(f"unknown plan kind {self.kind!r}")
        if self.kind == "auxiliary" and v.size and v.min() < 0:
            raise ContractViolation(
                f"auxiliary plan is negative at node {int(np.argmin(v))}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class WeightPair:
    w: np.ndarray  # products of (1 + (delta - alpha) dt)
    w_tilde: np.ndarray  # products of (1 - alpha dt)


@dataclass(frozen=True)
class AuxiliaryDual:
    gamma: np.ndarray
    source: Optional[DensityProcess] = None


PlanLike = Union[Plan, np.ndarray]


def _values(x, tree: EventTree) -> np.ndarray:
    v = x.values if isinstance(x, Plan) else np.asarray(x, dtype=float)
    if v.shape[0] != tree.n_nodes:
        raise ContractViolation(f"node process has {v.shape[0]} entries, tree has {tree.n_nodes} nodes")
    return v


def _forward(tree: EventTree, multiplier: np.ndarray, feed: np.ndarray, start: float) -> np.ndarray:
    """``X(child) = multiplier(node) * X(node) + feed(node)``, ``X(root) = start``."""
    out = np.zeros((tree.n_nodes,) + feed.shape[1:])
    out[0] = start
    for k in range(1, tree.horizon + 1):
        nodes = tree.nodes_at(k)
        par = tree.parent[nodes]
        m = multiplier[par].reshape((-1,) + (1,) * (feed.ndim - 1))
        out[nodes] = m * out[par] + feed[par]
    return out


def check_persistence(tree: EventTree, habit: HabitSpec) -> None:
    """Reject ``alpha * dt >= 1`` at a consumption node."""
    habit.check_tree(tree)
    step = habit.alpha * tree.node_dt
    bad = np.flatnonzero(tree.consumption_mask & (step >= 1.0))
    if bad.size:
        n = int(bad[0])
        raise PreconditionError(
            f"node {n}: alpha*dt = {float(step[n])!r} must stay below 1 (refine the time grid)"
        )


def weights(tree: EventTree, habit: HabitSpec, check: bool = True) -> WeightPair:
    """Path products defining the subsistence growth ``w`` and decay ``w_tilde``."""
    if check:
        check_persistence(tree, habit)
    else:
        habit.check_tree(tree)
    dt = tree.node_dt
    zero = np.zeros(tree.n_nodes)
    w = _forward(tree, 1.0 + (habit.delta - habit.alpha) * dt, zero, 1.0)
    wt = _forward(tree, 1.0 - habit.alpha * dt, zero, 1.0)
    return WeightPair(w, wt)


def habit_path(c: PlanLike, z: float, habit: HabitSpec, tree: EventTree) -> np.ndarray:
    """Standard of living ``Z`` on every node, terminal nodes included."""
    habit.check_tree(tree)
    cv = _values(c, tree)
    dt = tree.node_dt
    return _forward(tree, 1.0 - habit.alpha * dt, habit.delta * dt * cv, float(z))


def to_auxiliary(c: PlanLike, z: float, habit: HabitSpec, tree: EventTree,
                 dust: float = DEFAULT_OPTIONS.dust) -> Plan:
    """``c - Z`` on consumption nodes; fails where the habit exceeds consumption."""
    cv = _values(c, tree)
    Z = habit_path(cv, z, habit, tree)
    ct = np.where(tree.consumption_mask, cv - Z, 0.0)
    bad = np.flatnonzero(ct < -dust)
    if bad.size:
        n = int(bad[0])
        raise ContractViolation(
            f"node {n}: consumption {float(cv[n])!r} falls below the habit level {float(Z[n])!r}"
        )
    return Plan(np.maximum(ct, 0.0), "auxiliary")


def from_auxiliary(c_tilde: PlanLike, z: float, habit: HabitSpec, tree: EventTree) -> Plan:
    """Invert :func:`to_auxiliary`: rebuild consumption from its excess over habit."""
    habit.check_tree(tree)
    ct = np.where(tree.consumption_mask, _values(c_tilde, tree), 0.0)
    dt = tree.node_dt
    Zt = _forward(tree, 1.0 + (habit.delta - habit.alpha) * dt, habit.delta * dt * ct, float(z))
    return Plan(np.where(tree.consumption_mask, ct + Zt, 0.0), "consumption")


def subsistence_plan(z: float, tree: EventTree, habit: HabitSpec) -> Plan:
    """Consumption that exactly tracks its own habit from level ``z``."""
    if z < 0:
        raise PreconditionError("subsistence plan needs z >= 0")
    w = weights(tree, habit, check=False).w
    return Plan(np.where(tree.consumption_mask, z * w, 0.0), "consumption")


def pairing(a, b, tree: EventTree):
    """``sum_n P(n) a(n) b(n) dt`` over consumption nodes.

    ``b`` may carry trailing columns; the result then has one entry per column.
    """
    av = _values(a, tree)
    bv = _values(b, tree)
    mask = tree.consumption_mask
    weight = (tree.path_prob * tree.node_dt)[mask]
    if av.ndim != 1:
        raise ContractViolation("first pairing argument must be a single node process")
    if bv.ndim == 1:
        return float(np.sum(weight * av[mask] * bv[mask]))
    return (weight * av[mask]) @ bv[mask]


def gamma_of(Y: np.ndarray, habit: HabitSpec, tree: EventTree, w: Optional[np.ndarray] = None) -> np.ndarray:
    """Backward sweep for the auxiliary dual of one or several densities.

    ``Y`` has shape ``(n_nodes,)`` or ``(n_nodes, m)``; the map is linear in ``Y``.
    """
    Y = np.asarray(Y, dtype=float)
    habit.check_tree(tree)
    dt = tree.node_dt
    growth = 1.0 + (habit.delta - habit.alpha) * dt
    tail = np.zeros_like(Y)  # discounted remaining consumption-time value
    cont = np.zeros_like(Y)  # conditional expectation of the children's tail
    shape = (-1,) + (1,) * (Y.ndim - 1)
    for k in range(tree.horizon - 1, -1, -1):
        nodes = tree.nodes_at(k)
        if k + 1 <= tree.horizon - 1:
            kids = tree.nodes_at(k + 1)
            acc = np.zeros((tree.n_nodes,) + Y.shape[1:])
            np.add.at(acc, tree.parent[kids], tree.prob[kids].reshape(shape) * tail[kids])
            cont[nodes] = acc[nodes]
        tail[nodes] = Y[nodes] * dt[nodes].reshape(shape) + growth[nodes].reshape(shape) * cont[nodes]
    gamma = Y + habit.delta.reshape(shape) * cont
    gamma[~tree.consumption_mask] = 0.0
    return gamma


def auxiliary_dual(Y, habit: HabitSpec, tree: EventTree) -> AuxiliaryDual:
    source = Y if isinstance(Y, DensityProcess) else None
    Yv = Y.Y if isinstance(Y, DensityProcess) else np.asarray(Y, dtype=float)
    return AuxiliaryDual(gamma_of(Yv, habit, tree), source)


def budget_identity_residuals(c: PlanLike, z: float, Y, habit: HabitSpec, tree: EventTree):
    """Residuals of the two exact pairing identities linking ``(c, Y)`` to ``(c_tilde, Gamma)``.

    Returns ``(<c,Y> - <c~,G> - z<w~,G>, <w~,G> - <w,Y>)``.
    """
    Yv = Y.Y if isinstance(Y, DensityProcess) else np.asarray(Y, dtype=float)
    ct = to_auxiliary(c, z, habit, tree)
    wp = weights(tree, habit)
    G = gamma_of(Yv, habit, tree)
    wg = pairing(wp.w_tilde, G, tree)
    r1 = pairing(c, Yv, tree) - pairing(ct, G, tree) - z * wg
    r2 = wg - pairing(wp.w, Yv, tree)
    return r1, r2


def habit_matrix(tree: EventTree, habit: HabitSpec) -> np.ndarray:
    """Matrix ``L`` with ``Z = z * w_tilde + L @ c[consumption_nodes]`` on every node."""
    habit.check_tree(tree)
    nodes = tree.consumption_nodes
    dt = tree.node_dt
    feed = np.zeros((tree.n_nodes, nodes.size))
    feed[nodes, np.arange(nodes.size)] = habit.delta[nodes] * dt[nodes]
    return _forward(tree, 1.0 - habit.alpha * dt, feed, 0.0)


def reconstruction_matrix(tree: EventTree, habit: HabitSpec) -> np.ndarray:
    """Matrix ``R`` with ``from_auxiliary(c_tilde, z) = z * w + R @ c_tilde[consumption_nodes]``."""
    habit.check_tree(tree)
    nodes = tree.consumption_nodes
    dt = tree.node_dt
    feed = np.zeros((tree.n_nodes, nodes.size))
    feed[nodes, np.arange(nodes.size)] = habit.delta[nodes] * dt[nodes]
    out = _forward(tree, 1.0 + (habit.delta - habit.alpha) * dt, feed, 0.0)
    out[nodes, np.arange(nodes.size)] += 1.0
    out[~tree.consumption_mask] = 0.0
    return out
