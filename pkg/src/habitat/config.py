"""Numerical tolerances and search settings shared by every solver."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class SolverOptions:
    # linear programming
    lp_feasibility_tol: float = 1e-9
    lp_slackness_tol: float = 1e-8
    lp_max_iterations: int = 5000
    # barrier method
    kkt_tol: float = 1e-7
    mu_start: float = 1e-1
    mu_end: float = 1e-9
    newton_tol: float = 1e-22
    newton_max_iterations: int = 200
    # market / habit / domain
    polytope_tol: float = 1e-10
    conditional_tol: float = 1e-9
    dust: float = 1e-12
    replicable_tol: float = 1e-9
    vertex_limit: int = 10_000
    # conjugate search
    grid_y: int = 64
    grid_p: int = 32
    y_span: float = 1e4
    polish_steps: int = 50
    # verification
    seed: int = 0
    n_random_densities: int = 20
    probe_offset: float = 1e-3
    brute_resolution: float = 1e-3

    def replace(self, **changes) -> "SolverOptions":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, overrides: dict) -> "SolverOptions":
        """Apply ``key=value`` string overrides, coercing to the field type."""
        fields = {f.name: f for f in dataclasses.fields(self)}
        changes = {}
        for key, raw in overrides.items():
            if key not in fields:
                raise KeyError(f"unknown option {key!r}")
            current = getattr(self, key)
            changes[key] = type(current)(float(raw)) if isinstance(current, int) else float(raw)
        return self.replace(**changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


DEFAULT_OPTIONS = SolverOptions()
