import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netprice import costs as C
from netprice import demand as D
from netprice import scenarios
from netprice.errors import DomainError, InfeasibleError
from netprice.flow import (
    MinCostCurve,
    max_flow,
    min_cost_flow,
    min_cut_edges,
    optimal_magnitude,
    welfare,
    welfare_optimum,
)
from netprice.market import Commodity, Edge, MarketInstance

from instances import random_power_market, random_pwl_market
from oracles import central_diff, min_cost_paths, paths_of

# Frozen from oracles.min_cost_paths: two parallel links x^2 and 2x^2 carrying 1.5.
PARALLEL_SPLIT_COST = 1.5  # optimum puts 1.0 on the cheap link and 0.5 on the other


def two_links(dem=None):
    edges = [Edge("e1", "s", "t", C.power(1, 2)), Edge("e2", "s", "t", C.power(2, 2))]
    return MarketInstance(["s", "t"], edges, [Commodity("s", "t", dem or D.affine(4, 4))])


def test_parallel_split_against_frozen_oracle():
    sol = min_cost_flow(two_links(), 1.5)
    assert sol.edge_flow["e1"] == pytest.approx(1.0, abs=1e-8)
    assert sol.edge_flow["e2"] == pytest.approx(0.5, abs=1e-8)
    assert sol.cost == pytest.approx(PARALLEL_SPLIT_COST, abs=1e-10)
    oracle_cost, _ = min_cost_paths([lambda f: f * f, lambda f: 2 * f * f], [[0], [1]], 1.5)
    assert oracle_cost == pytest.approx(PARALLEL_SPLIT_COST, abs=1e-8)
    assert sol.marginal_minus == pytest.approx(2.0, abs=1e-7)
    assert sol.kkt_residual <= 1e-8


def test_single_good_optimum():
    inst = scenarios.build("single-good")
    x, sol = optimal_magnitude(inst)
    assert x == pytest.approx(1 / 3, abs=1e-10)
    assert welfare(inst, sol) == pytest.approx(1 / 3 - 1 / 18 - 1 / 9, abs=1e-10)


def test_zero_flow_and_errors():
    sol = min_cost_flow(two_links(), 0.0)
    assert sol.cost == 0 and sol.magnitude == 0
    with pytest.raises(DomainError):
        min_cost_flow(two_links(), -1.0)


def test_capacity_limits():
    edges = [Edge("e1", "s", "t", C.capacity(1.0)), Edge("e2", "s", "t", C.capacity(2.0))]
    inst = MarketInstance(["s", "t"], edges, [Commodity("s", "t", D.affine(4, 4))])
    assert max_flow(inst) == pytest.approx(3.0)
    assert set(min_cut_edges(inst)) == {"e1", "e2"}
    with pytest.raises(InfeasibleError):
        min_cost_flow(inst, 3.5)
    sol = min_cost_flow(inst, 2.5)
    assert sum(sol.edge_flow.values()) == pytest.approx(2.5)
    assert max(sol.edge_flow["e1"] - 1, sol.edge_flow["e2"] - 2) <= 1e-9


def test_pwl_costs_solved_exactly():
    edges = [Edge("e1", "s", "t", C.pwl_convex([1.0], [0.0, 3.0])), Edge("e2", "s", "t", C.pwl_convex([], [1.0]))]
    inst = MarketInstance(["s", "t"], edges, [Commodity("s", "t", D.affine(4, 4))], flags=["general-market"])
    sol = min_cost_flow(inst, 2.0)
    assert sol.edge_flow == pytest.approx({"e1": 1.0, "e2": 1.0}, abs=1e-12)
    assert sol.cost == pytest.approx(1.0, abs=1e-12)
    assert (sol.marginal_minus, sol.marginal_plus) == pytest.approx((1.0, 1.0))
    sol = min_cost_flow(inst, 1.0)
    assert (sol.marginal_minus, sol.marginal_plus) == pytest.approx((0.0, 1.0))


def _oracle_instance(seed):
    rng = np.random.default_rng(seed)
    inst = random_power_market(rng, D.affine(3, 2), max_nodes=5)
    arcs = [(e.tail, e.head) for e in inst.edges]
    funcs = [(lambda c, k: (lambda f: c * max(f, 0.0) ** k))(e.cost.c, e.cost.k) for e in inst.edges]
    paths = paths_of(inst.nodes, arcs, inst.commodities[0].source, inst.commodities[0].sink)
    return inst, funcs, paths


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 2.0))
def test_min_cost_matches_generic_nlp(seed, x):
    inst, funcs, paths = _oracle_instance(seed)
    sol = min_cost_flow(inst, x)
    oracle_cost, _ = min_cost_paths(funcs, paths, x)
    assert sol.cost <= oracle_cost + 1e-7
    assert sol.cost == pytest.approx(oracle_cost, rel=1e-5, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_curve_convex_and_derivative(seed):
    rng = np.random.default_rng(seed)
    inst = random_power_market(rng, D.affine(3, 2), max_nodes=6)
    curve = MinCostCurve(inst)
    xs = np.linspace(0, 2, 17)
    R = [curve.R(x) for x in xs]
    r = [curve.r(x) for x in xs]
    assert all(b >= a - 1e-9 for a, b in zip(r, r[1:]))
    second = np.diff(R, 2)
    assert np.all(second >= -1e-8)
    x = 0.8
    assert curve.r(x) == pytest.approx(central_diff(curve.R, x, 1e-5), abs=1e-4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.2, 3.0))
def test_pwl_flow_properties(seed, x):
    rng = np.random.default_rng(seed)
    inst = random_pwl_market(rng)
    sol = min_cost_flow(inst, x)
    assert sum(p.amount for p in sol.paths) == pytest.approx(x, abs=1e-9)
    assert sol.marginal_minus <= sol.marginal_plus + 1e-12
    for p in sol.paths:
        left = sum(inst.cost(e).marginal(sol.edge_flow[e], "left") for e in p.edges)
        assert left <= sol.marginal_minus + 1e-9


def test_welfare_optimum_matches_single_commodity():
    inst = scenarios.build("single-good")
    both = welfare_optimum(inst)
    x, _ = optimal_magnitude(inst)
    assert both.magnitude == pytest.approx(x, abs=1e-7)


def test_welfare_optimum_two_sources():
    inst = scenarios.build("two-source-inefficient")
    sol = welfare_optimum(inst)
    exp = scenarios.expected("two-source-inefficient")
    assert sol.commodity_magnitudes[0] == pytest.approx(exp["x_s1"].value, abs=1e-6)
    assert sol.commodity_magnitudes[1] == pytest.approx(exp["x_s2"].value, abs=1e-6)
    assert not math.isnan(welfare(inst, sol))


def test_optimal_magnitude_boundary_cases():
    inst = two_links(D.uniform(1.0, 2.0))
    x, _ = optimal_magnitude(inst)
    # r(x) = 4x/3 crosses the flat value 1 at x = 3/4.
    assert x == pytest.approx(0.75, abs=1e-9)
    far = two_links(D.affine(0.001, 10))
    x, _ = optimal_magnitude(far)
    assert 0 < x < 0.001
