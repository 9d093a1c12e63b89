import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from margin_scenario import (Affine, ChainConstants, Component, ConstraintChain, Domain, MarginSpec,
                             Objective, ScalarWrapper, Select, SolverConfig, circle_chain,
                             empirical_risks, fixed_budget_procedure, lambda_bar, margin_complexity,
                             solve_hard_margin, solve_max_margin, solve_regularized, solve_soft_margin,
                             solve_with_objective, violation_bound_posterior)
from margin_scenario.oracles import exact_violation_circle
from margin_scenario.solvers import FEASIBLE_NO_MARGIN, INFEASIBLE, MARGIN_FEASIBLE

from conftest import unit

CIRCLE = ChainConstants.from_values([1.0], [2 * math.sqrt(2)])


def _grid(lo, hi, k=401):
    g = np.linspace(lo, hi, k)
    X, Y = np.meshgrid(g, g)
    return np.column_stack([X.ravel(), Y.ravel()])


def test_hard_margin_fig1(circle, box2, fig1_thetas):
    res = solve_hard_margin(circle, fig1_thetas, 0.3, box2)
    assert res.status == MARGIN_FEASIBLE
    assert np.linalg.norm(res.x) <= 0.99
    assert exact_violation_circle(res.x) == 0.0
    assert res.worst_value <= -0.3 + 1e-9
    assert res.risk.vhat_gamma == 0.0


def test_hard_margin_unattainable(circle, box2, fig1_thetas):
    res = solve_hard_margin(circle, fig1_thetas, 1.5, box2)
    assert res.status == INFEASIBLE
    assert box2.contains(res.x)


def test_single_scenario_half_plane(circle, box2):
    res = solve_hard_margin(circle, [unit(40)], 2.0, box2)
    assert res.status == MARGIN_FEASIBLE
    assert unit(40) @ res.x - 1 <= -2.0 + 1e-9


def test_soft_margin_zero_slack_when_hard_feasible(circle, box2, fig1_thetas):
    hard = solve_hard_margin(circle, fig1_thetas, 0.3, box2)
    soft = solve_soft_margin(circle, fig1_thetas, 0.3, box2)
    assert soft.objective == 0.0 and np.all(soft.slacks == 0)
    assert soft.status == hard.status


def test_soft_margin_singleton_domain(circle):
    x0 = np.array([0.5, 0.25])
    dom = Domain.box(x0, x0)
    th = unit(10)
    res = solve_soft_margin(circle, [th], 0.4, dom)
    assert res.slacks[0] == max(0.0, th @ x0 - 1 + 0.4)


def test_soft_margin_allows_a_violation(circle):
    # three scenarios; the third one caps the hard margin
    th = np.array([unit(90), unit(200), unit(-20)])
    dom = Domain.box([-0.3, -0.3], [0.3, 0.3])
    hard = solve_max_margin(circle, th, dom)
    soft = solve_soft_margin(circle, th, hard.gamma + 0.2, dom)
    assert soft.status == INFEASIBLE
    assert soft.objective > 0
    assert soft.objective == pytest.approx(math.fsum(soft.slacks))


def test_max_margin_symmetric_triangle(circle, box2):
    th = np.array([unit(0), unit(120), unit(240)])
    res = solve_max_margin(circle, th, box2)
    np.testing.assert_allclose(res.x, 0.0, atol=1e-6)
    assert res.gamma == pytest.approx(1.0, abs=1e-9)
    # grid oracle for min_x max_i f
    G = _grid(-2, 2, 201)
    assert res.worst_value <= (G @ th.T).max(axis=1).min() - 1 + 1e-12


def test_max_margin_attains_box_boundary(circle, box2):
    res = solve_max_margin(circle, [unit(0)], box2)
    assert res.gamma == pytest.approx(3.0, abs=1e-9)
    assert res.x[0] == pytest.approx(-2.0)


def test_max_margin_duplicates_do_not_matter(circle, box2, fig1_thetas):
    a = solve_max_margin(circle, fig1_thetas, box2)
    b = solve_max_margin(circle, np.vstack([fig1_thetas, fig1_thetas[:2]]), box2)
    assert a.gamma == pytest.approx(b.gamma, abs=1e-9)


def test_max_margin_nonpositive_is_flagged(circle):
    # every x in the box sits on or outside the unit circle for theta = e1, e1
    dom = Domain.box([1.5, -1], [2, 1])
    res = solve_max_margin(circle, [unit(0)], dom)
    assert res.gamma <= 0 and res.status == FEASIBLE_NO_MARGIN


def test_objective_fig1_vertex(circle, box2, fig1_thetas):
    u = unit(-65)
    res = solve_with_objective(circle, fig1_thetas, 0.0, box2, Objective("linear", c=-u))
    assert np.linalg.norm(res.x) == pytest.approx(1 / math.cos(math.radians(35)), abs=1e-8)
    assert exact_violation_circle(res.x) == pytest.approx(35 / 180, abs=1e-7)


def test_objective_monotone_in_gamma(circle, box2, fig1_thetas):
    J = Objective("linear", c=np.array([1.0, 0.0]))
    r0 = solve_with_objective(circle, fig1_thetas, 0.0, box2, J)
    r3 = solve_with_objective(circle, fig1_thetas, 0.3, box2, J)
    assert r3.status == MARGIN_FEASIBLE
    assert r3.objective >= r0.objective - 1e-12
    # grid oracle on the margin polygon
    G = _grid(-2, 2)
    feas = (G @ fig1_thetas.T).max(axis=1) - 1 <= -0.3
    assert r3.objective <= G[feas, 0].min() + 1e-9


def test_lambda_variant_reduces_to_fixed_margin(circle, box2, fig1_thetas):
    J = Objective("linear", c=np.array([1.0, 0.0]))
    fixed = solve_with_objective(circle, fig1_thetas, 0.3, box2, J)
    tiny = solve_with_objective(circle, fig1_thetas, 0.3, box2, J, lam=1e-8)
    assert tiny.status == MARGIN_FEASIBLE
    assert tiny.objective == pytest.approx(fixed.objective, abs=1e-4)
    big = solve_with_objective(circle, fig1_thetas, 0.3, box2, J, lam=100.0)
    assert big.trace["achieved_gamma"] > 0.5


def test_zero_objective_is_feasibility(circle, box2, fig1_thetas):
    res = solve_with_objective(circle, fig1_thetas, 0.3, box2, None)
    assert res.status == MARGIN_FEASIBLE


def test_regularized_picks_origin(circle, box2, fig1_thetas):
    res = solve_regularized(circle, fig1_thetas, 0.3, box2)
    assert res.status == MARGIN_FEASIBLE
    assert res.lambda_bar == 1.0


def test_regularized_min_norm_point_off_center():
    chain = circle_chain(center=[3.0, 0.0])
    th = np.array([unit(0), unit(90), unit(-90)])
    dom = Domain.box([-2, -2], [4, 2])
    res = solve_regularized(chain, th, 0.3, dom)
    assert res.status == MARGIN_FEASIBLE
    # phi(x) = x - (3, 0); the constraint x1 - 3 <= 0.7 binds along e1 only when leaving the
    # floor region, so any point within distance 1 of (3, 0) with margin is optimal
    assert res.lambda_bar == pytest.approx(1.0)


def test_regularized_singleton_domain(circle):
    x0 = np.array([1.5, 0.5])
    res = solve_regularized(circle, [unit(180)], 0.1, Domain.box(x0, x0))
    assert res.lambda_bar == lambda_bar(circle, x0)


def test_regularized_pick_has_smaller_posterior_bound(circle, box2, fig1_thetas):
    res = solve_regularized(circle, fig1_thetas, 0.3, box2)
    other = np.array([-0.4, 0.1])
    assert (fig1_thetas @ other - 1).max() <= -0.3  # also margin-feasible, V-hat_gamma = 0
    a = violation_bound_posterior(circle, res.x, fig1_thetas, 0.3, 0.05)
    b = violation_bound_posterior(circle, other, fig1_thetas, 0.3, 0.05)
    assert a.raw_value <= b.raw_value


def test_fixed_budget_feasible_certifies_epsilon(circle, box2):
    from margin_scenario import DistributionSpec
    res, cert = fixed_budget_procedure(circle, CIRCLE, 1600, 0.5, 0.1, box2,
                                       dist=DistributionSpec.sphere(2), seed=3)
    assert res.gamma == pytest.approx(0.298877221562226, rel=1e-12)
    assert res.status == MARGIN_FEASIBLE
    assert cert.raw_value == pytest.approx(0.5, abs=1e-10)


def test_fixed_budget_infeasible_adds_empirical_risk(circle, box2):
    th = np.array([unit(0), unit(180)] * 12 + [unit(0)])
    res, cert = fixed_budget_procedure(circle, CIRCLE, 25, 0.5, 0.1, box2, scenarios=th)
    assert res.gamma > 1 and res.status == INFEASIBLE
    assert cert.raw_value == pytest.approx(res.risk.vhat_gamma + 0.5, abs=1e-10)


def test_integer_coordinates_are_respected():
    chain = circle_chain()
    dom = Domain([-3.0, -3.0], [3.0, 3.0], [True, False])
    th = np.array([unit(0), unit(100), unit(200)])
    J = Objective("linear", c=np.array([-1.0, 0.0]))
    res = solve_with_objective(chain, th, 0.1, dom, J)
    assert res.x[0] == round(res.x[0])
    assert res.status == MARGIN_FEASIBLE


def test_integer_neighborhood_fallback_sweep():
    d = 14  # 3^14 combinations exceed the enumeration cap
    chain = ConstraintChain((Component(Select(range(d)), Select(range(d)), Affine.constant(-1.0, d)),))
    dom = Domain(-np.ones(d) * 2, np.ones(d) * 2, np.ones(d, bool))
    th = np.eye(d)[:3]
    res = solve_hard_margin(chain, th, 0.5, dom, SolverConfig(multistarts=1, iterations=50))
    assert np.all(res.x == np.round(res.x))
    assert res.status == MARGIN_FEASIBLE


def _nonconvex_chain():
    comps = (Component(Select([0, 1]), Select([0, 1]), Affine.constant(-0.2, 2), ScalarWrapper("sin")),
             Component(Select([1, 0]), Select([0, 1]), None, ScalarWrapper("abs")))
    return ConstraintChain(comps, ("max",))


@settings(max_examples=10)
@given(st.integers(0, 10 ** 6), st.floats(0.05, 0.8))
def test_status_matches_fresh_evaluation(seed, gamma):
    chain = _nonconvex_chain()
    th = np.random.default_rng(seed).normal(size=(20, 2))
    dom = Domain.box([-1.5, -1.5], [1.5, 1.5])
    cfg = SolverConfig(multistarts=2, iterations=150, seed=seed)
    for res in (solve_hard_margin(chain, th, gamma, dom, cfg), solve_soft_margin(chain, th, gamma, dom, cfg)):
        assert dom.contains(res.x)
        worst = chain.evaluate_many(res.x, th).max()
        assert res.worst_value == worst
        assert (res.status == MARGIN_FEASIBLE) == (worst <= -gamma + cfg.tol)
        assert res.risk.vhat_gamma == empirical_risks(chain, res.x, th, MarginSpec(gamma)).vhat_gamma


def test_solver_is_deterministic(fig1_thetas, box2):
    chain = _nonconvex_chain()
    a = solve_hard_margin(chain, fig1_thetas, 0.2, box2, SolverConfig(seed=4))
    b = solve_hard_margin(chain, fig1_thetas, 0.2, box2, SolverConfig(seed=4))
    assert a.x.tobytes() == b.x.tobytes()


def test_solver_input_checks(circle, box2, fig1_thetas):
    with pytest.raises(ValueError, match="gamma"):
        solve_hard_margin(circle, fig1_thetas, 0.0, box2)
    with pytest.raises(ValueError, match="empty"):
        solve_hard_margin(circle, np.zeros((0, 2)), 0.1, box2)
    with pytest.raises(ValueError, match="dimension"):
        solve_hard_margin(circle, fig1_thetas, 0.1, Domain.box([0], [1]))
    with pytest.raises(ValueError):
        SolverConfig(multistarts=0)
