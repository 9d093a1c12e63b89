import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from margin_scenario import (ChainConstants, Domain, circle_chain, compute_constants,
                             empirical_rademacher_bound, estimate_empirical_rademacher,
                             exact_violation_circle, greedy_cover)
from margin_scenario.oracles import candidate_grid, rademacher_from_values, sup_distance
from margin_scenario.scenario_engine import DistributionSpec, sample_scenarios

from conftest import unit


def test_singleton_class_is_centered():
    vals = np.random.default_rng(0).normal(size=(1, 30))
    est = rademacher_from_values(vals, 4000, seed=1)
    assert abs(est.estimate) <= 3 * est.stderr


def test_two_constant_functions_closed_form():
    n, c = 10, 0.7
    vals = np.array([[c] * n, [-c] * n])
    exact = c / n * np.mean([abs(sum(s)) for s in itertools.product([-1, 1], repeat=n)])
    est = rademacher_from_values(vals, 20000, seed=2)
    assert abs(est.estimate - exact) <= 3 * est.stderr


def test_circle_estimate_below_empirical_bound():
    chain = circle_chain()
    dom = Domain.box([-1, -1], [1, 1])
    consts = compute_constants(chain, dom, DistributionSpec.sphere(2))
    th = sample_scenarios(DistributionSpec.sphere(2), 50, seed=4)
    xs = candidate_grid(dom, 64)
    assert len(xs) == 64
    est = estimate_empirical_rademacher(chain, th, xs, 1024, seed=5)
    assert est.estimate <= empirical_rademacher_bound(consts, chain, th) + 3 * est.stderr


def test_candidate_grid_high_dimension_is_in_domain():
    dom = Domain(np.zeros(5), np.ones(5) * 2, np.array([True, False, False, False, False]))
    xs = candidate_grid(dom, 40, seed=1)
    assert xs.shape == (40, 5)
    assert all(dom.contains(x) for x in xs)


def test_estimator_input_checks():
    with pytest.raises(ValueError, match="empty"):
        rademacher_from_values(np.zeros((0, 3)), 10, 0)
    with pytest.raises(ValueError, match="draw"):
        rademacher_from_values(np.zeros((2, 3)), 0, 0)


def test_cover_identical_rows():
    vals = np.tile(np.arange(5.0), (7, 1))
    for eps in (1e-9, 0.5, 10):
        assert greedy_cover(vals, eps).size == 1


def test_cover_pair():
    vals = np.array([[0.0, 0.0], [0.3, -0.1]])
    assert greedy_cover(vals, 0.31).size == 1
    assert greedy_cover(vals, 0.3).size == 2
    assert sup_distance(*vals) == pytest.approx(0.3)


def _min_cover(vals, eps):
    """Smallest improper eps-net (centers among the rows) by exhaustive search."""
    K = len(vals)
    D = np.abs(vals[:, None, :] - vals[None, :, :]).max(axis=2)
    covers = D < eps
    for size in range(1, K + 1):
        for centers in itertools.combinations(range(K), size):
            if covers[list(centers)].any(axis=0).all():
                return size
    return K


@settings(max_examples=25)
@given(st.integers(0, 10 ** 6), st.floats(0.05, 1.5))
def test_greedy_at_double_scale_beats_optimal_cover(seed, eps):
    vals = np.random.default_rng(seed).normal(size=(12, 4))
    assert greedy_cover(vals, 2 * eps).size <= _min_cover(vals, eps)


@given(st.integers(0, 10 ** 6))
def test_cover_monotone_and_valid(seed):
    vals = np.random.default_rng(seed).uniform(-1, 1, size=(30, 3))
    sizes = [greedy_cover(vals, e).size for e in (0.1, 0.2, 0.4, 0.8, 1.6, 3.0)]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))
    rep = greedy_cover(vals, 0.4)
    C = vals[list(rep.centers)]
    assert (np.abs(vals[:, None] - C[None]).max(axis=2).min(axis=1) < 0.4).all()


def test_cover_input_checks():
    with pytest.raises(ValueError):
        greedy_cover(np.zeros((2, 2)), 0.0)


def test_arc_oracle():
    assert exact_violation_circle((1.0, 0.0)) == 0.0
    assert exact_violation_circle((0.2, 0.1)) == 0.0
    x = unit(-65) / math.cos(math.radians(35))
    assert exact_violation_circle(x) == pytest.approx(35 / 180, abs=1e-12)
    assert exact_violation_circle((1e9, 0)) == pytest.approx(0.5, abs=1e-8)
