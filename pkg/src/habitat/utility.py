"""Time-discounted utility families, their conjugates and growth diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractViolation
from .habit import HabitSpec, weights
from .market import EventTree

Evaluator = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class UtilitySpec:
    """Evaluation bundle for ``U(t, x)`` and its convex conjugate ``V(t, y)``.

    Every callable takes ``(t, array)`` and is vectorised over the array.
    ``conjugate_curvature`` (``V''``) is optional; a central difference of
    ``conjugate_slope`` is used when it is missing.
    """

    family: str
    params: dict
    utility: Evaluator
    marginal: Evaluator
    inverse_marginal: Evaluator
    conjugate: Evaluator
    conjugate_slope: Evaluator
    conjugate_curvature: Optional[Evaluator] = None
    ae_inf_exact: Optional[float] = None
    ae_zero_exact: Optional[float] = None
    vectorized_time: bool = False  # callables broadcast over an array of times

    def curvature(self, t: float, y):
        if self.conjugate_curvature is not None:
            return self.conjugate_curvature(t, y)
        y = np.asarray(y, dtype=float)
        h = 1e-5 * y
        return (self.conjugate_slope(t, y + h) - self.conjugate_slope(t, y - h)) / (2 * h)

    def marginal_slope(self, t: float, x):
        """``U''`` through the conjugate: ``U''(x) = -1 / V''(U'(x))``."""
        return -1.0 / self.curvature(t, self.marginal(t, x))

    def at_times(self, name: str, times: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Evaluate the bundle member ``name`` with a per-entry time."""
        fn = getattr(self, name)
        values = np.asarray(values, dtype=float)
        if self.vectorized_time:
            return np.asarray(fn(np.asarray(times, dtype=float), values), dtype=float)
        out = np.empty_like(values)
        for t in np.unique(times):
            sel = times == t
            out[sel] = fn(float(t), values[sel])
        return out

    def to_dict(self) -> dict:
        if self.family == "custom":
            raise ContractViolation("custom utilities are code-level only and cannot be serialised")
        return {"family": self.family, **self.params}


def _log_family(beta: float) -> UtilitySpec:
    def disc(t):
        return np.exp(-beta * t)

    return UtilitySpec(
        family="log",
        params={"beta": beta},
        utility=lambda t, x: disc(t) * np.log(x),
        marginal=lambda t, x: disc(t) / np.asarray(x, dtype=float),
        inverse_marginal=lambda t, y: disc(t) / np.asarray(y, dtype=float),
        conjugate=lambda t, y: disc(t) * (-np.log(np.asarray(y, dtype=float) / disc(t)) - 1.0),
        conjugate_slope=lambda t, y: -disc(t) / np.asarray(y, dtype=float),
        conjugate_curvature=lambda t, y: disc(t) / np.asarray(y, dtype=float) ** 2,
        ae_inf_exact=0.0,
        ae_zero_exact=0.0,
        vectorized_time=True,
    )


def _power_family(p: float, beta: float) -> UtilitySpec:
    def disc(t):
        return np.exp(-beta * t)

    def inverse(t, y):
        return (np.asarray(y, dtype=float) / disc(t)) ** (1.0 / (p - 1.0))

    return UtilitySpec(
        family="power",
        params={"p": p, "beta": beta},
        utility=lambda t, x: disc(t) * np.asarray(x, dtype=float) ** p / p,
        marginal=lambda t, x: disc(t) * np.asarray(x, dtype=float) ** (p - 1.0),
        inverse_marginal=inverse,
        conjugate=lambda t, y: disc(t) * ((1.0 - p) / p) * (np.asarray(y, dtype=float) / disc(t)) ** (p / (p - 1.0)),
        conjugate_slope=lambda t, y: -inverse(t, y),
        conjugate_curvature=lambda t, y: inverse(t, y) / ((1.0 - p) * np.asarray(y, dtype=float)),
        ae_inf_exact=p,
        ae_zero_exact=abs(p),
        vectorized_time=True,
    )


_CUSTOM_KEYS = ("utility", "marginal", "inverse_marginal", "conjugate", "conjugate_slope")


def make_utility(family: str, **params) -> UtilitySpec:
    """Build a utility bundle.

    ``log``: optional ``beta``.  ``power``: exponent ``p < 1``, ``p != 0``, optional
    ``beta``.  ``custom``: callables named ``utility``, ``marginal``,
    ``inverse_marginal``, ``conjugate`` and ``conjugate_slope`` (optionally
    ``conjugate_curvature``).
    """
    if family == "custom":
        missing = [k for k in _CUSTOM_KEYS if not callable(params.get(k))]
        if missing:
            raise ContractViolation(f"custom utility is missing callables: {', '.join(missing)}")
        extra = {k: v for k, v in params.items() if k not in _CUSTOM_KEYS + ("conjugate_curvature",)}
        return UtilitySpec(
            family="custom",
            params=extra,
            conjugate_curvature=params.get("conjugate_curvature"),
            **{k: params[k] for k in _CUSTOM_KEYS},
        )
    beta = float(params.get("beta", 0.0))
    if beta < 0 or not np.isfinite(beta):
        raise ContractViolation("time discount beta must be a finite nonnegative number")
    if family == "log":
        return _log_family(beta)
    if family == "power":
        if "p" not in params:
            raise ContractViolation("power utility needs an exponent p")
        p = float(params["p"])
        if p == 0.0 or p >= 1.0 or not np.isfinite(p):
            raise ContractViolation(f"power exponent must satisfy p < 1 and p != 0 (got {p})")
        return _power_family(p, beta)
    raise ContractViolation(f"unknown utility family {family!r}")


# ---------------------------------------------------------------------------
# asymptotic elasticity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ElasticityReport:
    ae_inf_estimate: float
    ae_zero_estimate: float
    pass_ae_inf: bool
    pass_ae_zero: bool
    sign_up: bool
    sign_down: bool
    dual_ae_inf_estimate: float = float("nan")
    pass_dual: bool = True
    disagreement: bool = False
    truncated: bool = False
    warnings: tuple = ()
    per_time: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "ae_inf_estimate", "ae_zero_estimate", "pass_ae_inf", "pass_ae_zero",
            "sign_up", "sign_down", "dual_ae_inf_estimate", "pass_dual",
            "disagreement", "truncated")}
        out["warnings"] = list(self.warnings)
        out["per_time"] = {str(t): v for t, v in self.per_time.items()}
        return out


def _limit_estimate(args: np.ndarray, ratios: np.ndarray) -> float:
    """Upper estimate of ``limsup`` along a geometric grid.

    Maximum over the outer half, raised to the intercept of a straight-line fit
    of the ratio against ``1/|log x|`` when that intercept is larger.
    """
    if ratios.size == 0:
        return float("nan")
    outer = slice(ratios.size // 2, None)
    est = float(np.max(ratios[outer]))
    s = 1.0 / np.abs(np.log(args[outer]))
    if s.size >= 3 and np.ptp(s) > 0:
        slope, intercept = np.polyfit(s, ratios[outer], 1)
        est = max(est, float(intercept))
    return est


def _diverges(ratios: np.ndarray, cap: float) -> bool:
    if ratios.size == 0:
        return False
    outer = ratios[ratios.size // 2:]
    if np.max(outer) > cap:
        return True
    return outer.size >= 2 and outer[0] > 0 and outer[-1] > 2.0 * outer[0] and bool(np.all(np.diff(outer) >= 0))


def _ratio_on_grid(num: Callable, den: Callable, grid: np.ndarray, times, warnings: list, label: str):
    """``sup_t num/den`` on ``grid``; non-finite evaluations are dropped and reported."""
    sup = np.full(grid.size, -np.inf)
    per_time = {}
    keep = np.ones(grid.size, dtype=bool)
    for t in times:
        with np.errstate(all="ignore"):
            n = np.asarray(num(t, grid), dtype=float)
            d = np.asarray(den(t, grid), dtype=float)
            r = n / d
        bad = ~np.isfinite(n) | ~np.isfinite(d)
        if bad.any():
            keep &= ~bad
            warnings.append(
                f"{label}: non-finite evaluation at t={t:g} for {int(bad.sum())} grid points "
                f"(first at {grid[int(np.argmax(bad))]:.3g}); grid truncated"
            )
        zero = d == 0
        r = np.where(zero, -np.inf, r)
        per_time[float(t)] = r
        sup = np.maximum(sup, r)
    valid = keep & np.isfinite(sup)
    return grid[valid], sup[valid], per_time


def elasticity_report(
    u: UtilitySpec,
    times: Sequence[float] = (0.0,),
    max_exponent: int = 40,
    margin: float = 1e-3,
    divergence_cap: float = 1e3,
) -> ElasticityReport:
    """Grid estimates of the asymptotic elasticities of ``U`` and of ``V`` at infinity."""
    warnings: list = []
    big = 2.0 ** np.arange(0, max_exponent + 1)
    small = 2.0 ** -np.arange(0, max_exponent + 1)

    def upper(t, x):
        return x * u.marginal(t, x)

    xs, r_inf, per_inf = _ratio_on_grid(upper, u.utility, big, times, warnings, "large-x elasticity")
    xs0, r_zero, per_zero = _ratio_on_grid(upper, lambda t, x: np.abs(u.utility(t, x)), small, times,
                                           warnings, "small-x elasticity")
    ys, r_dual, _ = _ratio_on_grid(lambda t, y: y * u.conjugate_slope(t, y), u.conjugate, big, times,
                                   warnings, "conjugate elasticity")
    ae_inf = _limit_estimate(xs, r_inf)
    ae_zero = _limit_estimate(xs0, r_zero)
    ae_dual = _limit_estimate(ys, r_dual)
    pass_inf = bool(np.isfinite(ae_inf) and ae_inf < 1.0 - margin)
    pass_zero = bool(np.isfinite(ae_zero) and not _diverges(r_zero, divergence_cap))
    pass_dual = bool(np.isfinite(ae_dual) and ae_dual < 1.0 - margin)
    with np.errstate(all="ignore"):
        up_vals = [float(u.utility(t, big[-1])) for t in times]
        down_vals = [float(u.utility(t, small[-1])) for t in times]
    sign_up = bool(np.all(np.isfinite(up_vals)) and min(up_vals) > 0)
    sign_down = bool(np.all(np.isfinite(down_vals)) and max(down_vals) < 0)
    per_time = {
        t: {"large_x": float(np.max(per_inf[t][big.size // 2:])) if per_inf[t].size else float("nan"),
            "small_x": float(np.max(per_zero[t][small.size // 2:])) if per_zero[t].size else float("nan")}
        for t in per_inf
    }
    return ElasticityReport(
        ae_inf_estimate=ae_inf,
        ae_zero_estimate=ae_zero,
        pass_ae_inf=pass_inf,
        pass_ae_zero=pass_zero,
        sign_up=sign_up,
        sign_down=sign_down,
        dual_ae_inf_estimate=ae_dual,
        pass_dual=pass_dual,
        disagreement=pass_zero != pass_dual,
        truncated=bool(warnings),
        warnings=tuple(warnings),
        per_time=per_time,
    )


def decayed_endowment_utility(u: UtilitySpec, tree: EventTree, habit: HabitSpec, x_bar: float):
    """Expected utility of consuming ``x_bar * w_tilde`` over the horizon.

    Returns ``(finite, value)``; on a finite tree the value is always finite
    unless the utility itself overflows.
    """
    if x_bar <= 0:
        raise ContractViolation("x_bar must be positive")
    wt = weights(tree, habit).w_tilde
    mask = tree.consumption_mask
    t = tree.times[tree.time_index[mask]]
    vals = np.array([float(u.utility(tk, x_bar * wk)) for tk, wk in zip(t, wt[mask])])
    value = float(np.sum(tree.path_prob[mask] * tree.node_dt[mask] * vals))
    return bool(np.isfinite(value)), value
