"""Scenario-based risk certificates for sampled variational inequalities,
Nash and robust equilibria."""

__version__ = "0.1.0"

from .bounds import BoundQuery, Certificate, certify, epsilon, epsilon_table, solve_t
from .errors import ScenviError
from .games import (GameSpec, RobustEquilibrium, affine_quadratic_game, agent_risk_spec,
                    assemble_nash_vi, build_epigraph_qvi, solve_sampled_robust_eq,
                    worst_case_cost)
from .risk import (CoverageResult, RiskEstimate, coverage_experiment, gaussian_linear_risk,
                   mc_risk)
from .sets import Box, ConvexSet, Halfspace, ParametrizedSet, ProductSet, Quadratic, intersect
from .solver import (OperatorOracle, ScenarioVIProblem, Solution, SolverParams,
                     estimate_strong_monotonicity, natural_residual, solve_qvi, solve_vi)
from .support import SupportReport, assert_dimension_bound, check_degeneracy, count_support

__all__ = [
    "BoundQuery", "Box", "Certificate", "ConvexSet", "CoverageResult", "GameSpec", "Halfspace",
    "OperatorOracle", "ParametrizedSet", "ProductSet", "Quadratic", "RiskEstimate",
    "RobustEquilibrium", "ScenarioVIProblem", "ScenviError", "Solution", "SolverParams",
    "SupportReport", "affine_quadratic_game", "agent_risk_spec", "assemble_nash_vi",
    "assert_dimension_bound", "build_epigraph_qvi", "certify", "check_degeneracy",
    "count_support", "coverage_experiment", "epsilon", "epsilon_table",
    "estimate_strong_monotonicity", "gaussian_linear_risk", "intersect", "mc_risk",
    "natural_residual", "solve_qvi", "solve_sampled_robust_eq", "solve_t", "solve_vi",
    "worst_case_cost",
]
