"""Optimal consumption with addictive habit formation on finite event trees.

The library prices the subsistence stream, solves the primal problem in its
wealth and auxiliary forms, solves the dual over martingale densities and
certifies the results against independent oracles.
"""

from .config import DEFAULT_OPTIONS, SolverOptions
from .domain import (PriceBounds, in_dual_cone, in_effective_domain, in_enlarged_domain,
                     price_bounds, price_bounds_global, require_effective_domain)
from .dual import (ConjugacyResult, DualSolution, KFactor, conjugacy_check, gamma_matrix, k_factor,
                   recover_primal_from_dual, solve_dual, solve_dual_1d)
from .errors import (ArbitrageError, ContractViolation, HabitatError, InfeasibleError,
                     PreconditionError, RoutingError, SolverFailure)
from .habit import (AuxiliaryDual, HabitSpec, Plan, WeightPair, auxiliary_dual, budget_identity_residuals,
                    check_persistence, from_auxiliary, gamma_of, habit_path, pairing, subsistence_plan,
                    to_auxiliary, weights)
from .market import (DensityProcess, EventTree, MeasurePolytope, arbitrage_portfolio, build_scenario,
                     density_from_conditionals, is_complete, node_polytope, sample_conditionals,
                     tree_from_dict, tree_to_dict, validate_tree)
from .primal import (PrimalSolution, brute_force_primal, expected_utility, solve_primal_auxiliary,
                     solve_primal_wealth, superhedge)
from .scenario import Scenario, ScenarioError, bundled_scenarios, emit_scenario, parse_scenario
from .utility import ElasticityReport, UtilitySpec, decayed_endowment_utility, elasticity_report, make_utility
from .verify import Certificate, Check, ValueSurface, certify, oracle_compare, sweep_value_surface

__version__ = "0.1.0"

__all__ = [
    "__version__", "arbitrage_portfolio", "ArbitrageError", "auxiliary_dual", "AuxiliaryDual",
    "brute_force_primal", "budget_identity_residuals", "build_scenario", "bundled_scenarios",
    "Certificate", "certify", "Check", "check_persistence", "conjugacy_check", "ConjugacyResult",
    "ContractViolation", "decayed_endowment_utility", "DEFAULT_OPTIONS",
    "density_from_conditionals", "DensityProcess", "DualSolution", "elasticity_report",
    "ElasticityReport", "emit_scenario", "EventTree", "expected_utility", "from_auxiliary",
    "gamma_matrix", "gamma_of", "habit_path", "HabitatError", "HabitSpec", "in_dual_cone",
    "in_effective_domain", "in_enlarged_domain", "InfeasibleError", "is_complete", "k_factor",
    "KFactor", "make_utility", "MeasurePolytope", "node_polytope", "oracle_compare", "pairing",
    "parse_scenario", "Plan", "PreconditionError", "price_bounds", "price_bounds_global",
    "PriceBounds", "PrimalSolution", "recover_primal_from_dual", "require_effective_domain",
    "RoutingError", "sample_conditionals", "Scenario", "ScenarioError", "solve_dual",
    "solve_dual_1d", "solve_primal_auxiliary", "solve_primal_wealth", "SolverFailure",
    "SolverOptions", "subsistence_plan", "superhedge", "sweep_value_surface", "to_auxiliary",
    "tree_from_dict", "tree_to_dict", "UtilitySpec", "validate_tree", "ValueSurface", "WeightPair",
    "weights",
]
