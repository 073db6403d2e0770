"""Self-contained optimization engines.

Two solvers back every higher-level routine:

* :func:`solve_lp` -- dense two-phase primal simplex with Bland's rule.  It
  returns a dual vector with every optimal solve and a Farkas vector when the
  equality system has no nonnegative solution.
* :func:`solve_convex` -- log-barrier interior point method with damped Newton
  centering steps on the null space of the equality constraints.

Both are pure functions over value inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import nnls

from .config import DEFAULT_OPTIONS, SolverOptions
from .errors import ContractViolation, PreconditionError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERATIONS = "max-iterations"

_PIVOT_TOL = 1e-11


@dataclass(frozen=True)
class LinearProgram:
    """``min/max c @ x`` subject to ``A_eq @ x = b_eq`` and ``x >= lower``.

    ``lower`` entries may be ``-inf`` (or NaN) to mark a free variable; when
    ``lower`` is omitted every variable is nonnegative.
    """

    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lower: Optional[np.ndarray] = None
    sense: str = "min"

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        A = np.asarray(self.A_eq, dtype=float)
        if A.ndim == 1:
            A = A.reshape(1, -1) if A.size else np.zeros((0, c.size))
        b = np.asarray(self.b_eq, dtype=float).ravel()
        if A.shape[0] != b.size:
            raise ContractViolation(
                f"constraint matrix has {A.shape[0]} rows but right-hand side has {b.size}"
            )
        if A.shape[1] != c.size:
            raise ContractViolation(
                f"objective has {c.size} entries but constraint matrix has {A.shape[1]} columns"
            )
        if self.sense not in ("min", "max"):
            raise ContractViolation(f"sense must be 'min' or 'max', got {self.sense!r}")
        lower = np.zeros(c.size) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        if lower.size != c.size:
            raise ContractViolation("lower bound vector length differs from variable count")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A_eq", A)
        object.__setattr__(self, "b_eq", b)
        object.__setattr__(self, "lower", lower)

    @property
    def n_vars(self) -> int:
        return self.c.size


@dataclass(frozen=True)
class ConvexProgram:
    """Minimize a smooth convex objective under affine constraints.

    ``objective``, ``gradient`` and (optionally) ``hessian`` take the variable
    vector.  Equalities read ``A_eq @ v = b_eq``; inequalities ``G @ v <= h``.
    ``mu_start``/``mu_end`` bound the decade barrier schedule.
    """

    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    n_vars: int
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    mu_start: float = DEFAULT_OPTIONS.mu_start
    mu_end: float = DEFAULT_OPTIONS.mu_end

    def __post_init__(self):
        n = int(self.n_vars)
        A = np.zeros((0, n)) if self.A_eq is None else np.atleast_2d(np.asarray(self.A_eq, dtype=float))
        b = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).ravel()
        G = np.zeros((0, n)) if self.G is None else np.atleast_2d(np.asarray(self.G, dtype=float))
        h = np.zeros(0) if self.h is None else np.asarray(self.h, dtype=float).ravel()
        if A.shape[1] != n or G.shape[1] != n:
            raise ContractViolation("constraint matrices must have one column per variable")
        if A.shape[0] != b.size or G.shape[0] != h.size:
            raise ContractViolation("constraint rows and right-hand sides differ in length")
        if not (0 < self.mu_end <= self.mu_start):
            raise ContractViolation("barrier parameters must satisfy 0 < mu_end <= mu_start")
        object.__setattr__(self, "A_eq", A)
        object.__setattr__(self, "b_eq", b)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)


@dataclass
class SolveStatus:
    status: str
    value: float = float("nan")
    x: Optional[np.ndarray] = None
    iterations: int = 0
    # equality multipliers (LP duals / KKT nu), inequality multipliers (barrier)
    dual: Optional[np.ndarray] = None
    ineq_dual: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    certificate: Optional[np.ndarray] = None
    primal_residual: float = float("nan")
    slackness_residual: float = float("nan")
    duality_gap: float = float("nan")
    kkt_residual: float = float("nan")
    history: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


# ---------------------------------------------------------------------------
# Simplex
# ---------------------------------------------------------------------------


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0.0:
            T[i] -= T[i, col] * T[row]
    T[:, col] = 0.0
    T[row, col] = 1.0


def _bland(T, basis, allowed, tol, max_iter, iters):
    """Run simplex pivots with Bland's rule; returns (status, iterations)."""
    m = len(basis)
    while True:
        if iters >= max_iter:
            return MAX_ITERATIONS, iters
        reduced = T[m, :-1]
        entering = -1
        for j in np.flatnonzero(allowed):
            if reduced[j] < -tol:
                entering = int(j)
                break
        if entering < 0:
            return OPTIMAL, iters
        column = T[:m, entering]
        best_ratio = np.inf
        leaving = -1
        for i in range(m):
            if column[i] > _PIVOT_TOL:
                ratio = T[i, -1] / column[i]
                if ratio < best_ratio - 1e-14 or (
                    abs(ratio - best_ratio) <= 1e-14 and basis[i] < basis[leaving]
                ):
                    best_ratio = ratio
                    leaving = i
        if leaving < 0:
            return UNBOUNDED, iters
        _pivot(T, leaving, entering)
        basis[leaving] = entering
        iters += 1


def solve_lp(lp: LinearProgram, opts: SolverOptions = DEFAULT_OPTIONS) -> SolveStatus:
    """Solve ``lp`` with the two-phase simplex method and Bland's rule.

    Optimal results carry the equality duals, reduced costs, the primal
    feasibility residual, the complementary-slackness residual and the
    primal-dual objective gap.  Infeasible results carry a Farkas vector
    ``y`` with ``y @ A <= 0`` (on shifted columns) and ``y @ b > 0``.
    """
    sign = 1.0 if lp.sense == "min" else -1.0
    c = sign * lp.c
    A, b, lower = lp.A_eq, lp.b_eq, lp.lower
    m, n = A.shape
    free = ~np.isfinite(lower)
    shift = np.where(free, 0.0, lower)

    # standard form: x = shift + x_plus - x_minus (x_minus only for free vars)
    free_idx = np.flatnonzero(free)
    A_std = np.hstack([A, -A[:, free_idx]])
    c_std = np.concatenate([c, -c[free_idx]])
    b_std = b - A @ shift
    flip = np.where(b_std < 0, -1.0, 1.0)
    A_std = A_std * flip[:, None]
    b_std = b_std * flip
    n_std = A_std.shape[1]

    # tableau columns: standard vars, artificials, rhs
    T = np.zeros((m + 1, n_std + m + 1))
    T[:m, :n_std] = A_std
    T[:m, n_std:n_std + m] = np.eye(m)
    T[:m, -1] = b_std
    T[m, n_std:n_std + m] = 1.0
    T[m] -= T[:m].sum(axis=0)
    basis = list(range(n_std, n_std + m))
    scale = 1.0 + np.abs(b_std).max(initial=0.0)
    tol = 1e-12 * scale

    allowed = np.zeros(n_std + m, dtype=bool)
    allowed[:n_std] = True
    status, iters = _bland(T, basis, allowed, tol, opts.lp_max_iterations, 0)
    if status == MAX_ITERATIONS:
        return SolveStatus(MAX_ITERATIONS, iterations=iters)

    phase1 = -T[m, -1]
    if phase1 > opts.lp_feasibility_tol * scale:
        binv = T[:m, n_std:n_std + m]
        # phase-one duals: basic artificials cost one, everything else zero
        c_b = np.array([1.0 if j >= n_std else 0.0 for j in basis])
        y = c_b @ binv
        return SolveStatus(INFEASIBLE, iterations=iters, certificate=y * flip)

    # drive zero-level artificials out of the basis where possible
    for i, j in enumerate(basis):
        if j >= n_std:
            candidates = np.flatnonzero(np.abs(T[i, :n_std]) > 1e-9)
            if candidates.size:
                _pivot(T, i, int(candidates[0]))
                basis[i] = int(candidates[0])

    T[m] = 0.0
    T[m, :n_std] = c_std
    for i, j in enumerate(basis):
        if j < n_std and T[m, j] != 0.0:
            T[m] -= T[m, j] * T[i]
    cscale = 1.0 + np.abs(c_std).max(initial=0.0)
    status, iters = _bland(T, basis, allowed, 1e-12 * cscale, opts.lp_max_iterations, iters)
    if status == MAX_ITERATIONS:
        return SolveStatus(MAX_ITERATIONS, iterations=iters)
    if status == UNBOUNDED:
        return SolveStatus(UNBOUNDED, value=-sign * np.inf, iterations=iters)

    x_std = np.zeros(n_std + m)
    for i, j in enumerate(basis):
        x_std[j] = T[i, -1]
    x_std = np.maximum(x_std, 0.0)
    x = shift + x_std[:n]
    x[free_idx] -= x_std[n:n_std]

    binv = T[:m, n_std:n_std + m]
    c_full = np.concatenate([c_std, np.zeros(m)])
    y_std = c_full[basis] @ binv
    reduced = c_std - A_std.T @ y_std
    primal_value = float(c @ x)
    dual_value = float(b_std @ y_std + c @ shift)
    resid = float(np.abs(A @ x - b).max(initial=0.0))
    slack = float(np.abs(x_std[:n_std] * reduced).max(initial=0.0))
    return SolveStatus(
        OPTIMAL,
        value=sign * primal_value,
        x=x,
        iterations=iters,
        dual=sign * y_std * flip,
        reduced_costs=sign * reduced[:n],
        primal_residual=resid,
        slackness_residual=slack,
        duality_gap=abs(primal_value - dual_value),
    )


# ---------------------------------------------------------------------------
# Barrier method
# ---------------------------------------------------------------------------


def null_space(A: np.ndarray, rtol: float = 1e-10):
    """Orthonormal null-space basis of ``A`` and its numerical rank."""
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(n), 0
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    rank = int((s > rtol * max(1.0, s.max(initial=0.0))).sum())
    return vt[rank:].T.copy(), rank


def _fd_hessian(gradient, v, step=1e-6):
    n = v.size
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step * max(1.0, abs(v[i]))
        H[:, i] = (gradient(v + e) - gradient(v - e)) / (2 * e[i])
    return 0.5 * (H + H.T)


def check_gradient(cp: ConvexProgram, points, rtol: float = 1e-5) -> float:
    """Largest relative gap between ``cp.gradient`` and central differences."""
    worst = 0.0
    for v in points:
        v = np.asarray(v, dtype=float)
        g = cp.gradient(v)
        fd = np.empty_like(g)
        for i in range(v.size):
            hstep = 1e-6 * max(1.0, abs(v[i]))
            e = np.zeros_like(v)
            e[i] = hstep
            fd[i] = (cp.objective(v + e) - cp.objective(v - e)) / (2 * hstep)
        worst = max(worst, float(np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(g))))
    return worst


def _newton_solve(H, g):
    try:
        L = np.linalg.cholesky(H)
        return -np.linalg.solve(L.T, np.linalg.solve(L, g))
    except np.linalg.LinAlgError:
        return -np.linalg.lstsq(H, g, rcond=None)[0]


def solve_convex(cp: ConvexProgram, start, opts: SolverOptions = DEFAULT_OPTIONS) -> SolveStatus:
    """Minimize ``cp`` from a strictly feasible ``start``.

    The barrier parameter follows the decade schedule ``mu_start``, ...,
    ``mu_end``; each level is centered by damped Newton steps restricted to
    the null space of ``A_eq``.  ``history`` holds the objective value at
    every center and is nonincreasing along the schedule.
    """
    A, b, G, h = cp.A_eq, cp.b_eq, cp.G, cp.h
    v = np.asarray(start, dtype=float).ravel().copy()
    if v.size != cp.n_vars:
        raise ContractViolation("start vector length differs from variable count")
    N, _ = null_space(A)
    if A.shape[0]:
        v = v - np.linalg.lstsq(A, A @ v - b, rcond=None)[0]
        if np.abs(A @ v - b).max() > 1e-8 * (1.0 + np.abs(b).max()):
            raise ContractViolation("equality constraints are inconsistent")
    slack = h - G @ v
    if slack.size and slack.min() <= 0.0:
        raise PreconditionError(
            f"start is not strictly feasible (minimum inequality slack {slack.min():.3e})"
        )
    f0 = cp.objective(v)
    if not np.isfinite(f0):
        raise PreconditionError("objective is not finite at the start point")
    hess = cp.hessian or (lambda u: _fd_hessian(cp.gradient, u))
    g0_norm = float(np.linalg.norm(cp.gradient(v)))

    if N.shape[1] == 0:
        # equalities pin the point down
        return _finish(cp, v, 0.0, 0, [float(f0)], g0_norm, opts)

    mus = []
    mu = cp.mu_start
    while mu >= cp.mu_end * (1 - 1e-12):
        mus.append(mu)
        mu /= 10.0
    if not mus or mus[-1] > cp.mu_end * (1 + 1e-12):
        mus.append(cp.mu_end)

    def phi(u_v, mu):
        s = h - G @ u_v
        if s.size and s.min() <= 0.0:
            return np.inf
        val = cp.objective(u_v)
        if not np.isfinite(val):
            return np.inf
        return val - mu * np.log(s).sum()

    iters = 0
    history = []
    for mu in mus:
        current = phi(v, mu)
        last_decrement, stalled = np.inf, 0
        for _ in range(opts.newton_max_iterations):
            s = h - G @ v
            grad = cp.gradient(v) + mu * (G.T @ (1.0 / s))
            H = hess(v) + mu * (G.T * (1.0 / s**2)) @ G
            gr = N.T @ grad
            Hr = N.T @ H @ N
            d = _newton_solve(0.5 * (Hr + Hr.T), gr)
            decrement = float(-gr @ d)
            iters += 1
            if decrement < 0:
                d = -gr
                decrement = float(gr @ gr)
            if decrement / 2.0 <= opts.newton_tol * max(1.0, abs(current)):
                break
            dv = N @ d
            if decrement < 0.25:
                # quadratic region: objective differences sink below rounding,
                # so full steps are judged by feasibility and decrement decay
                cand = v + dv
                val = phi(cand, mu)
                if np.isfinite(val) and val <= current + 1e-12 * (1.0 + abs(current)):
                    stalled = stalled + 1 if decrement >= 0.5 * last_decrement else 0
                    last_decrement = decrement
                    v, current = cand, val
                    if stalled >= 3:
                        break
                    continue
            step = 1.0
            accepted = False
            for _ls in range(80):
                cand = v + step * dv
                val = phi(cand, mu)
                if val <= current - 0.25 * step * decrement:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            v, current = cand, val
        history.append(float(cp.objective(v)))
    return _finish(cp, v, mus[-1], iters, history, g0_norm, opts)


def _finish(cp, v, mu, iters, history, g0_norm, opts):
    A, G, h = cp.A_eq, cp.G, cp.h
    grad = cp.gradient(v)
    s = h - G @ v
    lam = mu / s if s.size else np.zeros(0)
    rhs = grad + G.T @ lam
    if A.shape[0]:
        nu = -np.linalg.lstsq(A.T, rhs, rcond=None)[0]
        resid_vec = rhs + A.T @ nu
    else:
        nu = np.zeros(0)
        resid_vec = rhs
    kkt = float(np.linalg.norm(resid_vec))
    if s.size and mu > 0:
        # barrier multipliers mu/s lose digits on near-active rows; refit them
        active = s <= np.sqrt(mu) * (1.0 + np.abs(h))
        if active.any():
            Nsp, _ = null_space(A)
            Ga = G[active]
            coef, _ = nnls(Nsp.T @ Ga.T, -(Nsp.T @ grad))
            lam_fit = np.zeros_like(lam)
            lam_fit[active] = coef
            rhs_fit = grad + G.T @ lam_fit
            nu_fit = -np.linalg.lstsq(A.T, rhs_fit, rcond=None)[0] if A.shape[0] else np.zeros(0)
            kkt_fit = float(np.linalg.norm(rhs_fit + (A.T @ nu_fit if A.shape[0] else 0.0)))
            if kkt_fit < kkt:
                lam, nu, kkt = lam_fit, nu_fit, kkt_fit
    status = OPTIMAL if kkt <= opts.kkt_tol * (1.0 + g0_norm) else MAX_ITERATIONS
    return SolveStatus(
        status,
        value=float(cp.objective(v)),
        x=v if status == OPTIMAL else None,
        iterations=iters,
        dual=nu,
        ineq_dual=lam,
        primal_residual=float(np.abs(A @ v - cp.b_eq).max(initial=0.0)),
        duality_gap=float(mu * s.size),
        kkt_residual=kkt,
        history=history,
    )
