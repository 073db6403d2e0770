"""Finite event-tree markets and their martingale-measure polytopes.

Nodes are stored in breadth-first order.  Node ``0`` is the root at time
index 0; a node at time index ``k`` has its children at ``k + 1``.  The
riskless bond is the numeraire and is not stored; ``prices`` holds the
discounted risky assets only.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import DEFAULT_OPTIONS
from .errors import ArbitrageError, ContractViolation, PreconditionError
from .numerics import LinearProgram, solve_lp


@dataclass(frozen=True, eq=False)
class EventTree:
    """Finite filtered market.

    Attributes:
        times: time grid ``t_0 = 0 < ... < t_N = T``.
        parent: parent index per node (``-1`` for the root).
        prob: physical transition probability from the parent (root: 1).
        prices: discounted asset prices, shape ``(n_nodes, d)``.
        time_index: epoch of every node.
    """

    times: np.ndarray
    parent: np.ndarray
    prob: np.ndarray
    prices: np.ndarray
    time_index: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        parent = np.asarray(self.parent, dtype=int).ravel()
        prob = np.asarray(self.prob, dtype=float).ravel()
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim == 1:
            prices = prices.reshape(-1, 1)
        tix = np.asarray(self.time_index, dtype=int).ravel()
        n = parent.size
        if not (prob.size == n and prices.shape[0] == n and tix.size == n):
            raise ContractViolation("node arrays must all have one entry per node")
        if n == 0:
            raise ContractViolation("a tree needs at least one node")
        for i, p in enumerate(parent):
            if p >= i or p < -1:
                raise ContractViolation(
                    f"node {i}: parent index {p} breaks breadth-first order"
                )
            if p >= 0 and tix[i] != tix[p] + 1:
                raise ContractViolation(f"node {i}: time index must exceed its parent's by one")
        if tix.max() >= times.size:
            raise ContractViolation("time grid is shorter than the deepest node")
        for name, arr in (("times", times), ("parent", parent), ("prob", prob),
                          ("prices", prices), ("time_index", tix)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        children = [[] for _ in range(n)]
        for i, p in enumerate(parent):
            if p >= 0:
                children[p].append(i)
        path = np.empty(n)
        for i, p in enumerate(parent):
            path[i] = prob[i] if p < 0 else path[p] * prob[i]
        self._cache["children"] = [tuple(c) for c in children]
        self._cache["path_prob"] = path

    # -- structure ---------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.parent.size

    @property
    def n_assets(self) -> int:
        return self.prices.shape[1]

    @property
    def horizon(self) -> int:
        """Number of periods ``N``."""
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dts(self) -> np.ndarray:
        return np.diff(self.times)

    def children(self, node: int) -> tuple:
        return self._cache["children"][node]

    @property
    def path_prob(self) -> np.ndarray:
        return self._cache["path_prob"]

    def is_terminal(self, node: int) -> bool:
        return self.time_index[node] == self.horizon

    @property
    def consumption_nodes(self) -> np.ndarray:
        """Nodes at epochs ``0 .. N-1`` (where consumption is decided)."""
        key = "consumption_nodes"
        if key not in self._cache:
            self._cache[key] = np.flatnonzero(self.time_index < self.horizon)
        return self._cache[key]

    @property
    def consumption_mask(self) -> np.ndarray:
        return self.time_index < self.horizon

    @property
    def node_dt(self) -> np.ndarray:
        """``dt`` of the period starting at each node (zero on terminal nodes)."""
        key = "node_dt"
        if key not in self._cache:
            dt = np.zeros(self.n_nodes)
            mask = self.consumption_mask
            dt[mask] = self.dts[self.time_index[mask]]
            self._cache[key] = dt
        return self._cache[key]

    def nodes_at(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.time_index == k)

    def path(self, node: int) -> list:
        out = [node]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out[::-1]

    def conditional_expectation(self, values: np.ndarray, node: int) -> float:
        ch = self.children(node)
        return float(self.prob[list(ch)] @ values[list(ch)])

    def cached(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]


@dataclass(frozen=True)
class MeasurePolytope:
    """Closed polytope of conditional martingale measures at one node."""

    node: int
    children: tuple
    A: np.ndarray  # rows: normalisation, then one martingale row per asset
    b: np.ndarray
    vertices: np.ndarray  # shape (n_vertices, n_children)

    @property
    def is_singleton(self) -> bool:
        return self.vertices.shape[0] == 1

    def barycenter(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def contains(self, q, tol: float = 1e-9) -> bool:
        q = np.asarray(q, dtype=float)
        if q.shape != (len(self.children),) or q.min() < -tol:
            return False
        scale = 1.0 + np.abs(self.A).max()
        return bool(np.abs(self.A @ q - self.b).max() <= tol * scale)


@dataclass(frozen=True)
class DensityProcess:
    """Martingale density ``Y`` on every node together with its conditionals."""

    Y: np.ndarray
    interior: bool
    conditionals: Optional[dict] = None


# ---------------------------------------------------------------------------
# validation & polytopes
# ---------------------------------------------------------------------------


def _martingale_system(tree: EventTree, node: int):
    ch = list(tree.children(node))
    dS = (tree.prices[ch] - tree.prices[node]).T  # (d, m)
    A = np.vstack([np.ones((1, len(ch))), dS])
    b = np.zeros(A.shape[0])
    b[0] = 1.0
    return ch, A, b


def arbitrage_portfolio(tree: EventTree, node: int) -> Optional[np.ndarray]:
    """Return a one-period arbitrage at ``node`` or ``None`` if there is none.

    Solves ``max sum(s)`` over ``H . dS_j >= s_j``, ``0 <= s_j <= 1``.
    A positive optimum is a trade with nonnegative payoff in every child and
    a positive payoff in at least one -- the certificate that no strictly
    positive martingale measure exists at the node.
    """
    ch = list(tree.children(node))
    m, d = len(ch), tree.n_assets
    dS = tree.prices[ch] - tree.prices[node]
    # variables: H (free, d), s (m), e (m), f (m)
    n_var = d + 3 * m
    A = np.zeros((2 * m, n_var))
    b = np.zeros(2 * m)
    for j in range(m):
        A[j, :d] = dS[j]
        A[j, d + j] = -1.0
        A[j, d + m + j] = -1.0
        A[m + j, d + j] = 1.0
        A[m + j, d + 2 * m + j] = 1.0
        b[m + j] = 1.0
    c = np.zeros(n_var)
    c[d:d + m] = 1.0
    lower = np.zeros(n_var)
    lower[:d] = -np.inf
    res = solve_lp(LinearProgram(c, A, b, lower=lower, sense="max"))
    if res.optimal and res.value > 1e-9:
        return res.x[:d]
    return None


def _enumerate_vertices(A: np.ndarray, b: np.ndarray, tol: float) -> np.ndarray:
    m = A.shape[1]
    rank = np.linalg.matrix_rank(A, tol=1e-12 * max(1.0, np.abs(A).max()))
    # keep a maximal set of independent rows (row 0, the normalisation, first)
    rows = []
    for i in range(A.shape[0]):
        trial = rows + [i]
        if np.linalg.matrix_rank(A[trial], tol=1e-12 * max(1.0, np.abs(A).max())) == len(trial):
            rows = trial
    Ar, br = A[rows], b[rows]
    found = []
    for cols in itertools.combinations(range(m), rank):
        sub = Ar[:, cols]
        if abs(np.linalg.det(sub)) < 1e-14:
            continue
        qb = np.linalg.solve(sub, br)
        if qb.min() < -tol:
            continue
        q = np.zeros(m)
        q[list(cols)] = np.maximum(qb, 0.0)
        if np.abs(A @ q - b).max() > tol * (1.0 + np.abs(A).max()):
            continue
        if not any(np.abs(q - v).max() <= 1e-12 for v in found):
            found.append(q)
    found.sort(key=lambda v: tuple(-v))
    return np.array(found).reshape(len(found), m)


def node_polytope(tree: EventTree, node: int, check_arbitrage: bool = True) -> MeasurePolytope:
    """Vertex description of the conditional martingale measures at ``node``."""
    if tree.is_terminal(node):
        raise PreconditionError(f"node {node} is terminal and has no polytope")

    def build():
        ch, A, b = _martingale_system(tree, node)
        if check_arbitrage:
            h = arbitrage_portfolio(tree, node)
            if h is not None:
                raise ArbitrageError(
                    f"node {node} admits an arbitrage (portfolio {np.round(h, 12).tolist()})",
                    node=node,
                    portfolio=h,
                )
        verts = _enumerate_vertices(A, b, DEFAULT_OPTIONS.polytope_tol)
        if verts.shape[0] == 0:
            raise ArbitrageError(f"node {node} has an empty martingale polytope", node=node)
        return MeasurePolytope(node, tuple(ch), A, b, verts)

    if not check_arbitrage:
        return build()
    return tree.cached(("polytope", node), build)


def validate_tree(tree: EventTree) -> list:
    """List every invariant violation (empty list when the tree is usable)."""
    issues = []
    roots = np.flatnonzero(tree.parent < 0)
    if roots.size != 1 or roots[0] != 0:
        issues.append(f"tree must have exactly one root at index 0 (found {roots.tolist()})")
    if tree.time_index[0] != 0:
        issues.append("root must sit at time index 0")
    if tree.times[0] != 0.0:
        issues.append("time grid must start at 0")
    if np.any(np.diff(tree.times) <= 0):
        issues.append("time grid must be strictly increasing")
    if np.any(tree.prices <= 0):
        bad = np.flatnonzero((tree.prices <= 0).any(axis=1)).tolist()
        issues.append(f"asset prices must be positive (nodes {bad})")
    N = tree.horizon
    for n in range(tree.n_nodes):
        ch = tree.children(n)
        k = tree.time_index[n]
        if k < N and len(ch) < 2:
            issues.append(f"node {n}: non-terminal node needs at least two children")
        if k == N and ch:
            issues.append(f"node {n}: node at the final epoch has children")
        if n > 0 and not (0.0 < tree.prob[n] < 1.0):
            issues.append(f"node {n}: transition probability {float(tree.prob[n])!r} outside (0, 1)")
        if ch and abs(tree.prob[list(ch)].sum() - 1.0) > 1e-12:
            issues.append(f"node {n}: child probabilities sum to {float(tree.prob[list(ch)].sum())!r}, not 1")
    leaves = [n for n in range(tree.n_nodes) if not tree.children(n)]
    if any(tree.time_index[l] != N for l in leaves):
        issues.append("every leaf must sit at the final epoch")
    total = tree.path_prob[leaves].sum()
    if abs(total - 1.0) > 1e-12:
        issues.append(f"leaf probabilities sum to {float(total)!r}, not 1 (normalization)")
    if issues:
        return issues
    for n in tree.consumption_nodes:
        h = arbitrage_portfolio(tree, int(n))
        if h is not None:
            issues.append(f"node {n}: arbitrage (portfolio {np.round(h, 12).tolist()})")
    return issues


def require_valid(tree: EventTree) -> EventTree:
    issues = validate_tree(tree)
    if issues:
        raise ContractViolation("invalid market: " + "; ".join(issues))
    return tree


def is_complete(tree: EventTree) -> bool:
    return all(node_polytope(tree, int(n)).is_singleton for n in tree.consumption_nodes)


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


def density_from_conditionals(tree: EventTree, conditionals, tol: float = DEFAULT_OPTIONS.conditional_tol) -> DensityProcess:
    """Multiply ``q/p`` along paths.

    ``conditionals`` maps every non-terminal node to its measure over the
    node's children (a dict or a sequence indexed by node).
    """
    Y = np.zeros(tree.n_nodes)
    Y[0] = 1.0
    interior = True
    stored = {}
    for n in tree.consumption_nodes:
        n = int(n)
        q = np.asarray(conditionals[n], dtype=float)
        poly = node_polytope(tree, n)
        if not poly.contains(q, tol):
            raise PreconditionError(f"node {n}: conditional measure {q.tolist()} is outside the polytope")
        q = np.maximum(q, 0.0)
        if q.min() <= 0.0:
            interior = False
        stored[n] = q
        ch = list(poly.children)
        Y[ch] = Y[n] * q / tree.prob[ch]
    return DensityProcess(Y, interior, stored)


def physical_conditionals(tree: EventTree) -> dict:
    return {int(n): tree.prob[list(tree.children(int(n)))].copy() for n in tree.consumption_nodes}


def sample_conditionals(tree: EventTree, rng: np.random.Generator, interior: bool = True) -> dict:
    """Random node measures: Dirichlet mixtures of the polytope vertices.

    With ``interior=False`` a random vertex is returned at each node instead.
    """
    out = {}
    for n in tree.consumption_nodes:
        verts = node_polytope(tree, int(n)).vertices
        if interior:
            weights = rng.dirichlet(np.ones(verts.shape[0]))
            out[int(n)] = weights @ verts
        else:
            out[int(n)] = verts[rng.integers(verts.shape[0])].copy()
    return out


def node_masses(tree: EventTree, conditionals) -> np.ndarray:
    """``Q(node)`` -- the measure of reaching each node."""
    Q = np.zeros(tree.n_nodes)
    Q[0] = 1.0
    for n in tree.consumption_nodes:
        ch = list(tree.children(int(n)))
        Q[ch] = Q[int(n)] * np.asarray(conditionals[int(n)])
    return Q


def conditionals_from_masses(tree: EventTree, Q: np.ndarray) -> dict:
    """Invert :func:`node_masses`.

    Nodes without mass, or whose children carry none (the last consumption
    epoch when only consumption nodes are weighted), fall back to the barycenter.
    """
    out = {}
    for n in tree.consumption_nodes:
        n = int(n)
        ch = list(tree.children(n))
        if Q[n] > 1e-300 and ch and np.all(np.isfinite(Q[ch])) and Q[ch].sum() > 1e-300:
            out[n] = np.maximum(Q[ch], 0.0) / Q[n]
        else:
            out[n] = node_polytope(tree, n).barycenter()
    return out


# ---------------------------------------------------------------------------
# construction & serialisation
# ---------------------------------------------------------------------------


def _multinomial(N: int, factors: np.ndarray, probs: Sequence[float], T: float, s0) -> EventTree:
    factors = np.atleast_2d(np.asarray(factors, dtype=float))  # (d, branches)
    probs = np.asarray(probs, dtype=float)
    s0 = np.broadcast_to(np.asarray(s0, dtype=float), (factors.shape[0],)).copy()
    parent, prob, prices, tix = [-1], [1.0], [s0], [0]
    frontier = [0]
    for k in range(N):
        nxt = []
        for node in frontier:
            for j in range(factors.shape[1]):
                parent.append(node)
                prob.append(float(probs[j]))
                prices.append(prices[node] * factors[:, j])
                tix.append(k + 1)
                nxt.append(len(parent) - 1)
        frontier = nxt
    times = np.linspace(0.0, T, N + 1)
    return EventTree(times, parent, prob, np.array(prices), tix)


def build_scenario(kind: str, **params) -> EventTree:
    """Generate and validate a market.

    ``binomial``: ``N, u, d, p`` with ``d < 1 < u`` (optional ``T``, ``s0``).
    ``trinomial``: ``N, moves`` (up, mid, down factors or one triple per
    asset), ``probs`` (default uniform).  ``multinomial``: ``N, moves`` of shape
    ``(assets, branches)``, ``probs``.  ``custom``: ``tree`` dictionary as
    produced by :func:`tree_to_dict`.  ``T`` defaults to ``N`` (unit steps).
    """
    if kind == "custom":
        tree = tree_from_dict(params["tree"])
        return require_valid(tree)
    N = int(params.get("N", 0))
    if N < 1:
        raise ContractViolation("number of periods N must be at least 1")
    T = float(params.get("T", N))
    if T <= 0:
        raise ContractViolation("horizon T must be positive")
    s0 = params.get("s0", 1.0)
    if kind == "binomial":
        u, d, p = float(params["u"]), float(params["d"]), float(params.get("p", 0.5))
        if not (0 < d < 1 < u):
            raise ContractViolation(f"binomial factors need 0 < d < 1 < u (got u={u}, d={d})")
        if not (0 < p < 1):
            raise ContractViolation("binomial probability must lie in (0, 1)")
        tree = _multinomial(N, [[u, d]], [p, 1 - p], T, s0)
    elif kind in ("trinomial", "multinomial"):
        moves = np.atleast_2d(np.asarray(params["moves"], dtype=float))
        if np.any(moves <= 0):
            raise ContractViolation("move factors must be positive")
        branches = moves.shape[1]
        if kind == "trinomial" and branches != 3:
            raise ContractViolation("trinomial moves need three factors per asset")
        probs = params.get("probs")
        probs = np.full(branches, 1.0 / branches) if probs is None else np.asarray(probs, dtype=float)
        if probs.size != branches or np.any(probs <= 0):
            raise ContractViolation("branch probabilities must be positive, one per branch")
        tree = _multinomial(N, moves, probs, T, s0)
    else:
        raise ContractViolation(f"unknown market kind {kind!r}")
    return require_valid(tree)


def _num(x: float) -> str:
    return repr(float(x))


def tree_to_dict(tree: EventTree) -> dict:
    nodes = []
    for i in range(tree.n_nodes):
        nodes.append({
            "parent": int(tree.parent[i]),
            "prob": _num(tree.prob[i]),
            "prices": [float(s) for s in tree.prices[i]],
            "time_index": int(tree.time_index[i]),
        })
    return {"times": [float(t) for t in tree.times], "nodes": nodes}


def tree_from_dict(data: dict) -> EventTree:
    nodes = data["nodes"]
    return EventTree(
        np.array([float(t) for t in data["times"]]),
        [int(nd["parent"]) for nd in nodes],
        [float(nd["prob"]) for nd in nodes],
        np.array([[float(s) for s in nd["prices"]] for nd in nodes]),
        [int(nd["time_index"]) for nd in nodes],
    )


def mass_system(tree: EventTree):
    """Linear description of martingale node masses on consumption nodes.

    Returns ``(nodes, A, b)`` where ``nodes`` lists the consumption nodes (the
    column order) and ``A @ Q = b`` encodes ``Q(root) = 1``, mass conservation
    and the martingale property at every node whose children are still
    consumption nodes.  Together with ``Q >= 0`` this is the closure of the
    martingale measures restricted to consumption epochs.
    """

    def build():
        nodes = tree.consumption_nodes
        col = {int(n): i for i, n in enumerate(nodes)}
        d = tree.n_assets
        rows = [np.eye(1, nodes.size, 0).ravel()]
        rhs = [1.0]
        for n in nodes:
            n = int(n)
            if tree.time_index[n] > tree.horizon - 2:
                continue
            ch = list(tree.children(n))
            row = np.zeros(nodes.size)
            row[[col[c] for c in ch]] = 1.0
            row[col[n]] = -1.0
            rows.append(row)
            rhs.append(0.0)
            for a in range(d):
                row = np.zeros(nodes.size)
                row[[col[c] for c in ch]] = tree.prices[ch, a] - tree.prices[n, a]
                rows.append(row)
                rhs.append(0.0)
        A = np.array(rows)
        b = np.array(rhs)
        A.setflags(write=False)
        b.setflags(write=False)
        return nodes, A, b

    return tree.cached("mass_system", build)


def vertex_densities(tree: EventTree, limit: int):
    """Densities generated by every combination of node-polytope vertices.

    Only nodes at epochs ``<= N-2`` matter for densities on consumption nodes,
    so only those are combined.  Returns ``(n_nodes, K)`` with zero rows at
    terminal nodes and duplicate columns removed, or ``None`` if the
    combination count exceeds ``limit``.
    """
    relevant = [int(n) for n in tree.consumption_nodes if tree.time_index[n] <= tree.horizon - 2]
    count = 1
    for n in relevant:
        count *= node_polytope(tree, n).vertices.shape[0]
        if count > limit:
            return None
    Q = np.zeros((tree.n_nodes, 1))
    Q[0] = 1.0
    for n in relevant:
        poly = node_polytope(tree, n)
        nv = poly.vertices.shape[0]
        Q = np.repeat(Q, nv, axis=1)
        ch = list(poly.children)
        Q[ch, :] = Q[n, :] * np.tile(poly.vertices.T, Q.shape[1] // nv)
    Q[~tree.consumption_mask] = 0.0
    Y = Q / tree.path_prob[:, None]
    _, keep = np.unique(np.round(Y, 12), axis=1, return_index=True)
    return Y[:, np.sort(keep)]
