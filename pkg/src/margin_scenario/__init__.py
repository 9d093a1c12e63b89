"""Margin-based sample complexity and violation certificates for nonconvex
scenario programs."""
from .certificates import (Certificate, ComplexityEstimate, PreconditionError, convex_sample_complexity,
                           convex_scenario_delta, covering_fast_rate_bound, dimension_crossover,
                           empirical_rademacher_bound, log_convex_scenario_delta, margin_complexity, margin_sample_complexity,
                           rademacher_bound, replay, vc_bound, violation_bound,
                           violation_bound_covering, violation_bound_posterior,
                           violation_bound_uniform_margin)
from .constraint_model import (EXACT, SAMPLED, UPPER_BOUND, Affine, ChainConstants, Component,
                               ConstraintChain, Domain, Lookup, Monomials, ScalarWrapper, Select,
                               build_chain, circle_chain, compute_constants, evaluate, lambda_bar,
                               load_problem, save_problem)
from .margin_risk import INDICATOR, PIECEWISE, MarginSpec, RiskReport, empirical_risks, margin_loss
from .oracles import estimate_empirical_rademacher, exact_violation_circle, greedy_cover
from .scenario_engine import (DistributionSpec, ScenarioSet, ViolationEstimate, monte_carlo_violation,
                              sample_scenarios)
from .solvers import (Objective, SolveResult, SolverConfig, fixed_budget_procedure, solve_hard_margin,
                      solve_max_margin, solve_regularized, solve_soft_margin, solve_with_objective)

__version__ = "0.1.0"
