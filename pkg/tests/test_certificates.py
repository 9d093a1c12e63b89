import json
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from margin_scenario import (ChainConstants, PreconditionError, circle_chain, convex_sample_complexity,
                             convex_scenario_delta, covering_fast_rate_bound, dimension_crossover,
                             empirical_rademacher_bound, margin_complexity, margin_sample_complexity,
                             rademacher_bound, replay, vc_bound, violation_bound,
                             violation_bound_covering, violation_bound_posterior,
                             violation_bound_uniform_margin)
from margin_scenario.certificates import Certificate, default_gamma_grid

mp.mp.dps = 50

UNIT = ChainConstants.from_values([1.0], [1.0])
CIRCLE = ChainConstants.from_values([1.0], [2 * math.sqrt(2)])


def _circle_thetas(n, seed=0):
    a = np.random.default_rng(seed).uniform(0, 2 * np.pi, n)
    return np.column_stack([np.cos(a), np.sin(a)])


# -- Rademacher bounds --------------------------------------------------------

def test_rademacher_bound_examples():
    assert rademacher_bound(UNIT, 100) == pytest.approx(0.1, abs=1e-15)
    assert rademacher_bound(ChainConstants.from_values([1.0], [0.0]), 100) == 0.0
    assert rademacher_bound(CIRCLE, 1600) == pytest.approx(0.0707106781186548, rel=1e-14)


def test_empirical_rademacher_bound_examples():
    chain = circle_chain()
    th = _circle_thetas(100)
    assert empirical_rademacher_bound(UNIT, chain, th) == pytest.approx(rademacher_bound(UNIT, 100), rel=1e-14)
    assert empirical_rademacher_bound(UNIT, chain, np.zeros((5, 2))) == 0.0
    mixed = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    two = ChainConstants.from_values([1.0], [2.0])
    assert empirical_rademacher_bound(two, chain, mixed) == pytest.approx(2 * math.sqrt(2) / 4, rel=1e-14)


@given(st.integers(1, 60), st.integers(0, 1000))
def test_empirical_never_exceeds_worst_case(n, seed):
    th = np.random.default_rng(seed).uniform(-1, 1, size=(n, 2))
    th /= np.maximum(1.0, np.linalg.norm(th, axis=1, keepdims=True))  # inside the unit ball, tau = 1
    assert empirical_rademacher_bound(CIRCLE, circle_chain(), th) <= rademacher_bound(CIRCLE, n) + 1e-14


# -- fixed-margin certificate ----------------------------------------------------

def test_fixed_margin_certificate_example():
    c = violation_bound(0.0, UNIT, 0.5, 0.01, 100)
    oracle = 0 + 2 / mp.mpf("0.5") * mp.mpf("0.1") + mp.sqrt(mp.log(100) / 200)
    assert float(oracle) == pytest.approx(0.551742712938515, rel=1e-14)
    assert c.value == pytest.approx(0.551742712938515, rel=1e-13)
    assert c.terms["complexity"] == pytest.approx(0.4)
    assert c.certified and c.warnings == []


def test_fixed_margin_limits_and_clamp():
    zero = ChainConstants.from_values([1.0], [0.0])
    assert violation_bound(0.0, zero, 1.0, 1 - 1e-12, 100).value < 1e-6
    c = violation_bound(0.5, CIRCLE, 0.01, 0.05, 10)
    assert c.value == 1.0 and c.raw_value > 1 and any("vacuous" in w for w in c.warnings)


def test_fixed_margin_input_checks():
    with pytest.raises(ValueError, match="gamma"):
        violation_bound(0.0, UNIT, 0.0, 0.1, 10)
    with pytest.raises(ValueError, match="delta"):
        violation_bound(0.0, UNIT, 1.0, 1.0, 10)


def test_sampled_constants_are_not_certified():
    c = ChainConstants.from_values([1.0], [1.0], tau_flags=("sampled-estimate",))
    cert = violation_bound(0.0, c, 0.5, 0.05, 100)
    assert not cert.certified and any("non-certified" in w for w in cert.warnings)
    # empirical mode does not consume tau
    cert = violation_bound(0.0, c, 0.5, 0.05, 100, mode="empirical", scenarios=_circle_thetas(100),
                           chain=circle_chain())
    assert cert.certified


def test_empirical_mode_terms():
    th = _circle_thetas(100)
    cert = violation_bound(0.0, UNIT, 0.5, 0.05, 100, mode="empirical", scenarios=th, chain=circle_chain())
    assert cert.terms["confidence"] == pytest.approx(3 * math.sqrt(math.log(40) / 200))
    assert cert.terms["complexity"] == pytest.approx(4 * 0.1)


@given(st.floats(0, 1), st.floats(0.01, 3), st.floats(0.001, 0.999), st.integers(1, 10 ** 6))
def test_terms_add_up_and_replay(vhat, gamma, delta, n):
    cert = violation_bound(vhat, CIRCLE, gamma, delta, n)
    assert cert.term_sum == pytest.approx(cert.raw_value, rel=1e-12)
    assert 0 <= cert.value <= 1
    assert replay(json.loads(json.dumps(cert.to_dict()))) == pytest.approx(cert.raw_value, rel=1e-12)


# -- uniform-over-margin certificate ------------------------------------------------

def test_uniform_margin_single_point_grid():
    cert = violation_bound_uniform_margin(lambda g: 0.1, UNIT, 0.5, [0.5], 0.05, 100)
    assert cert.terms["extra"] == 0.0
    assert cert.raw_value == pytest.approx(0.1 + 4 / 0.5 * 0.1 + math.sqrt(math.log(20) / 200))


def test_uniform_margin_prefers_largest_margin_on_ties():
    cert = violation_bound_uniform_margin({0.5: 0.0, 0.25: 0.0}, UNIT, 0.5, [0.5, 0.25], 0.05, 100)
    assert cert.inputs["gamma"] == 0.5


def test_uniform_margin_grid_default_and_validation():
    g = default_gamma_grid(0.5)
    assert g.size == 16 and g[0] == 0.5 and g[-1] > 0.005
    with pytest.raises(ValueError, match="grid"):
        violation_bound_uniform_margin(lambda g: 0.0, UNIT, 0.5, [0.6], 0.05, 100)


def test_uniform_margin_on_circle_run():
    chain = circle_chain()
    th = _circle_thetas(400, seed=3)
    x = np.array([0.2, -0.1])
    f = chain.evaluate_many(x, th)
    grid = 0.5 * 2.0 ** -np.arange(8)
    from margin_scenario import MarginSpec
    from margin_scenario.margin_risk import risks_from_values
    vh = lambda g: risks_from_values(f, MarginSpec(g)).vhat_gamma  # noqa: E731
    cert = violation_bound_uniform_margin(vh, CIRCLE, 0.5, grid, 0.05, 400)
    fixed = violation_bound(vh(0.5), CIRCLE, 0.5, 0.05, 400).raw_value
    # the grid minimum is at most the value at gamma-bar, which differs from the
    # fixed-margin bound only by the doubled complexity term
    assert cert.raw_value <= fixed + 2 / 0.5 * rademacher_bound(CIRCLE, 400) + 1e-12
    assert cert.raw_value == pytest.approx(min(e["bound"] for e in cert.inputs["grid"]))


# -- a-posteriori certificate --------------------------------------------------------

def test_posterior_example():
    th = _circle_thetas(100, seed=1)
    cert = violation_bound_posterior(circle_chain(), (0, 0), th, 0.5, 0.05)
    oracle = 2 * 10 / (mp.mpf("0.5") * 100) + 3 * mp.sqrt(mp.log(120) / 200)
    assert cert.raw_value == pytest.approx(float(oracle), rel=1e-12)
    assert cert.raw_value == pytest.approx(0.864152053130428, rel=1e-12)
    assert cert.terms["extra"] == 0.0


def test_posterior_doubling_radius_moves_only_complexity_and_extra():
    th = _circle_thetas(100, seed=1)
    a = violation_bound_posterior(circle_chain(), (0, 0), th, 0.5, 0.05, vhat_gamma=0.0)
    b = violation_bound_posterior(circle_chain(), (2, 0), th, 0.5, 0.05, vhat_gamma=0.0)
    assert b.terms["complexity"] == pytest.approx(2 * a.terms["complexity"])
    assert b.terms["extra"] > a.terms["extra"] == 0.0
    assert b.terms["confidence"] == a.terms["confidence"]


# -- covering-number certificates -------------------------------------------------------

def test_covering_fast_rate_example():
    oracle = 4 * (144 * mp.log(6e11) + mp.log(80)) / mp.mpf(10) ** 10
    assert covering_fast_rate_bound(UNIT, 1.0, 0.05, 10 ** 10) == pytest.approx(float(oracle), rel=1e-13)
    assert float(oracle) == pytest.approx(1.56387607100243e-6, rel=1e-13)


def test_covering_zero_error_matches_fast_rate():
    cert = violation_bound_covering(UNIT, 1.0, 0.05, 10 ** 10, 0.0)
    assert cert.raw_value == covering_fast_rate_bound(UNIT, 1.0, 0.05, 10 ** 10)
    assert cert.theorem == "covering-fast-rate" and cert.loss == "indicator"


def test_covering_monotone_in_gamma():
    c = ChainConstants.from_values([1.0, 2.0], [1.0, 0.5], p=[1, 1])
    a = violation_bound_covering(c, 1.0, 0.05, 10 ** 8, 0.01)
    b = violation_bound_covering(c, 2.0, 0.05, 10 ** 8, 0.01)
    assert b.inputs["scales"] == pytest.approx([m / 2 for m in a.inputs["scales"]])
    assert b.raw_value < a.raw_value


def test_covering_refuses_tiny_scales():
    tiny = ChainConstants.from_values([1e-6], [1e-6])
    with pytest.raises(PreconditionError, match="60"):
        violation_bound_covering(tiny, 1.0, 0.05, 10, 0.0)


# -- baselines ------------------------------------------------------------------------

def test_vc_example():
    cert = vc_bound(3, 0.0, 0.05, 1000)
    oracle = 2 * mp.sqrt(6 * mp.log(mp.e * 1000 / 3) / 1000) + mp.sqrt(mp.log(20) / 2000)
    assert cert.raw_value == pytest.approx(float(oracle), rel=1e-13)
    assert cert.raw_value == pytest.approx(0.442953969188529, rel=1e-12)


def test_vc_monotone_and_clamped():
    vals = [vc_bound(2, 0.0, 0.05, n).raw_value for n in range(6, 400, 7)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    c = vc_bound(2, 1.0, 0.05, 100)
    assert c.value == 1.0 and any("vacuous" in w for w in c.warnings)


def _tail_oracle(n, d, eps):
    eps = mp.mpf(eps)
    return mp.fsum(mp.binomial(n, j) * eps ** j * (1 - eps) ** (n - j) for j in range(d))


def test_binomial_tail_examples():
    assert convex_scenario_delta(50, 1, 0.1) == pytest.approx(0.9 ** 50, rel=1e-14)
    assert convex_scenario_delta(12, 12, 0.3) == pytest.approx(1 - 0.3 ** 12, rel=1e-14)
    v = convex_scenario_delta(1000, 10, 0.03)
    assert v == pytest.approx(float(_tail_oracle(1000, 10, "0.03")), rel=1e-12)
    assert v == pytest.approx(5.6600699268344e-6, rel=1e-12)


@given(st.integers(1, 3000), st.integers(1, 30), st.floats(1e-4, 0.5))
def test_binomial_tail_against_oracle(n, d, eps):
    d = min(d, n)
    assert convex_scenario_delta(n, d, eps) == pytest.approx(float(_tail_oracle(n, d, eps)), rel=1e-12, abs=1e-300)


# -- complexities --------------------------------------------------------------------------

def test_margin_sample_complexity_example():
    est = margin_sample_complexity(0.03, 0.001, 2.0, 1.0)
    oracle = (4 + mp.sqrt(mp.log(1000) / 2)) ** 2 / mp.mpf("0.03") ** 2
    assert est.value == pytest.approx(float(oracle), rel=1e-13)
    assert est.rounded == 38136


def test_margin_sample_complexity_scaling():
    a = margin_sample_complexity(0.1, 0.01, 1.0, 0.5).value
    assert margin_sample_complexity(0.05, 0.01, 1.0, 0.5).value == pytest.approx(4 * a)
    assert margin_sample_complexity(0.1, 0.01, 1.0, 1e12).value == pytest.approx(0.5 * math.log(100) / 0.01)


def test_convex_sample_complexity_examples():
    assert convex_sample_complexity(0.03, 0.001, 573).rounded == 38661
    assert convex_sample_complexity(0.1, 0.01, 0).value == pytest.approx(2 * math.log(100) / 0.1)
    assert convex_sample_complexity(0.1, 1 - 1e-15, 7).value == pytest.approx(140.0)


def test_dimension_crossover_examples():
    assert dimension_crossover(0.03, 0.001, 2.0, 1.0) == 573
    rhs = 0.5 * math.log(1000) / (2 * 0.03)
    assert dimension_crossover(0.03, 0.001, 0.0, 1.0) == math.floor(rhs) + 1
    a, b = dimension_crossover(0.03, 0.001, 2.0, 1.0), dimension_crossover(0.06, 0.001, 2.0, 1.0)
    assert abs(a / b - 2) < 0.01


def test_margin_complexity_example_and_refusal():
    est = margin_complexity(1600, 0.5, 0.1, CIRCLE)
    oracle = 2 * 2 * mp.sqrt(2) / (mp.mpf("0.5") * 40 - mp.sqrt(mp.log(10) / 2))
    assert est.value == pytest.approx(float(oracle), rel=1e-13)
    assert est.value == pytest.approx(0.298877221562226, rel=1e-12)
    with pytest.raises(PreconditionError, match="budget too small"):
        margin_complexity(4, 0.1, 0.1, CIRCLE)
    gs = [margin_complexity(10 ** k, 0.5, 0.1, CIRCLE).value for k in range(4, 18, 2)]
    assert all(a > b for a, b in zip(gs, gs[1:])) and gs[-1] < 1e-6


@given(st.integers(100, 10 ** 7), st.floats(0.05, 0.9), st.floats(0.001, 0.5), st.floats(0.01, 10))
def test_margin_complexity_inverts_fixed_margin_bound(n, eps, delta, s):
    try:
        g = margin_complexity(n, eps, delta, s).value
    except PreconditionError:
        return
    cert = violation_bound(0.0, ChainConstants.from_values([s], [1.0]), g, delta, n)
    assert cert.terms["complexity"] + cert.terms["confidence"] == pytest.approx(eps, abs=1e-10)


def test_certificate_json_round_trip():
    cert = violation_bound(0.1, CIRCLE, 0.5, 0.05, 400)
    back = Certificate.from_dict(json.loads(json.dumps(cert.to_dict())))
    assert back.raw_value == cert.raw_value and back.terms == cert.terms
    assert back.constants_hash == CIRCLE.snapshot_hash()


@given(st.integers(1000, 10 ** 4), st.integers(1, 50), st.floats(0.2, 0.9))
def test_log_tail_survives_underflow(n, d, eps):
    from margin_scenario import log_convex_scenario_delta
    e = mp.mpf(eps)
    exact = mp.log(mp.fsum(mp.binomial(n, j) * e ** j * (1 - e) ** (n - j) for j in range(d)))
    got = log_convex_scenario_delta(n, d, eps)
    assert abs(got - float(exact)) <= 1e-12 * max(1.0, abs(float(exact)))
