import itertools

import pytest

from netprice import costs as C
from netprice import demand as D
from netprice import scenarios
from netprice.equilibrium import capacitated_elastic_equilibrium, find_equilibrium
from netprice.errors import DomainError
from netprice.flow import min_cost_flow, welfare_optimum
from netprice.market import GENERAL_MARKET, Commodity, Edge, MarketInstance, PathFlow
from netprice.verify import (
    check_all,
    check_buyer_best_response,
    check_local_dominance,
    check_properties,
    check_seller_stability,
    flow_from_paths,
    grid_search_equilibria,
    routes,
    verify_solution,
)


def test_single_good_equilibrium_passes():
    inst = scenarios.build("single-good")
    report = verify_solution(inst, find_equilibrium(inst))
    assert report.passed, report.to_dict()
    assert set(report.checks) == {"buyer_best_response", "seller_stability", "local_dominance", "properties"}


def test_competitive_price_is_not_stable():
    inst = scenarios.build("single-good")
    flow = min_cost_flow(inst, 1 / 3)
    report = check_all(inst, {"e1": 2 / 3}, flow)
    assert report.checks["buyer_best_response"].passed
    bad = report.checks["seller_stability"]
    assert not bad.passed
    w = bad.witness
    # Against demand 1 - p and cost x^2 the best reply is 3/4, earning 1/8 instead of 1/9.
    assert w["edge"] == "e1"
    assert w["price"] == pytest.approx(0.75, abs=1e-6)
    assert w["profit"] == pytest.approx(0.125, abs=1e-9)
    assert w["old_profit"] == pytest.approx(1 / 9, abs=1e-9)
    assert w["profit"] >= 1 / 8 - 1e-9


def test_two_source_marginal_prices_rejected():
    inst = scenarios.build("two-source-inefficient")
    flow = welfare_optimum(inst)
    prices = {e.id: e.cost.marginal(flow.edge_flow[e.id], "right") for e in inst.edges}
    result = check_seller_stability(inst, prices, flow)
    assert not result.passed
    assert result.witness["edge"] == "e1"
    assert result.witness["price"] == pytest.approx(0.75, abs=1e-6)


def test_capacitated_construction_passes():
    inst = scenarios.build("capacitated")
    assert verify_solution(inst, capacitated_elastic_equilibrium(inst)).passed


def _parallel(value=3.0):
    edges = [Edge("e1", "s", "t", C.linear(1)), Edge("e2", "s", "t", C.linear(1))]
    return MarketInstance(["s", "t"], edges, [Commodity("s", "t", D.uniform(value, 1.0))], flags=[GENERAL_MARKET])


def test_buyer_on_a_non_route():
    inst = _parallel()
    flow = flow_from_paths(inst, [PathFlow(("e1", "e2"), 1.0)])
    res = check_buyer_best_response(inst, {"e1": 1.0, "e2": 1.0}, flow)
    assert not res.passed and res.witness["reason"] == "flow path is not a route"


def test_buyer_pays_more_than_cheapest():
    inst = _parallel()
    flow = flow_from_paths(inst, [PathFlow(("e1",), 1.0)])
    res = check_buyer_best_response(inst, {"e1": 2.0, "e2": 1.5}, flow)
    assert not res.passed and res.margin == pytest.approx(0.5)


def test_buyers_left_out_below_their_value():
    inst = _parallel()
    flow = flow_from_paths(inst, [PathFlow(("e1",), 0.5)])
    res = check_buyer_best_response(inst, {"e1": 2.0, "e2": 2.0}, flow)
    assert not res.passed and res.margin == pytest.approx(1.0)


def test_unused_edge_must_sit_at_marginal_cost():
    inst = _parallel()
    flow = flow_from_paths(inst, [PathFlow(("e1",), 1.0)])
    res = check_properties(inst, {"e1": 1.0, "e2": 1.7}, flow)
    assert not res.passed and res.witness["edge"] == "e2"
    assert check_properties(inst, {"e1": 1.0, "e2": 1.0}, flow).passed
    assert not check_properties(inst, {"e1": 1.0}, flow).passed


def test_local_dominance():
    edges = [Edge("e1", "s", "t", C.power(1, 2)), Edge("e2", "s", "t", C.power(1, 2))]
    inst = MarketInstance(["s", "t"], edges, [Commodity("s", "t", D.affine(3, 3))])
    flow = flow_from_paths(inst, [PathFlow(("e1",), 0.5), PathFlow(("e2",), 0.5)])
    # Priced at marginal cost 1, shifting buyers never helps either seller.
    assert check_local_dominance(inst, {"e1": 1.0, "e2": 1.0}, flow).passed
    # At price 3 gaining buyers earns 3 per unit against marginal cost 1.
    res = check_local_dominance(inst, {"e1": 3.0, "e2": 3.0}, flow)
    assert not res.passed and res.witness["eps"] == pytest.approx(0.01)
    single = flow_from_paths(inst, [PathFlow(("e1",), 1.0)])
    assert "vacuous" in check_local_dominance(inst, {"e1": 1.0, "e2": 1.0}, single).notes[0]


def test_flow_from_paths_and_routes():
    inst = scenarios.build("two-source-inefficient")
    flow = flow_from_paths(inst, [PathFlow(("e1", "e2"), 0.25, 0), PathFlow(("e3",), 0.5, 1)])
    assert flow.commodity_magnitudes == (0.25, 0.5)
    assert flow.edge_flow["e1"] == 0.25 and flow.edge_flow["e4"] == 0.0
    assert {r.commodity for r in routes(inst)} == {0, 1}


def test_parallel_bertrand_undercut():
    inst = _parallel()
    flow = flow_from_paths(inst, [PathFlow(("e1",), 0.5), PathFlow(("e2",), 0.5)])
    res = check_seller_stability(inst, {"e1": 2.0, "e2": 2.0}, flow)
    assert not res.passed
    # Ties go to the deviator, so matching or shaving the price takes every buyer.
    assert res.witness["price"] <= 2.0
    assert res.witness["profit"] == pytest.approx(1.0, abs=1e-6)
    assert check_seller_stability(inst, {"e1": 1.0, "e2": 1.0}, flow).passed


def test_report_serializes():
    inst = scenarios.build("single-good")
    doc = verify_solution(inst, find_equilibrium(inst), grid=50).to_dict()
    assert doc["passed"] and doc["grid"] == 50
    assert set(doc["checks"]["properties"]) == {"name", "passed", "margin", "witness", "notes"}
    with pytest.raises(DomainError):
        check_all(inst, {"e1": 0.75}, min_cost_flow(inst, 0.25), checks=["bogus"])


def test_grid_search_parallel_bertrand():
    res = grid_search_equilibria(_parallel(), step=0.5)
    assert [e["prices"] for e in res.equilibria] == [{"e1": 1.0, "e2": 1.0}]
    assert res.found and res.points == res.ticks ** 2


def _series_oracle(ticks, step):
    """Nash points of two free links in series sold to unit buyers with value 1."""
    out = []
    for i, j in itertools.product(range(ticks), repeat=2):
        a, b = i * step, j * step
        sells = a + b <= 1 + 1e-12
        ok_a = (a + b >= 1 - 1e-12) if sells else b >= 1 - 1e-12
        ok_b = (a + b >= 1 - 1e-12) if sells else a >= 1 - 1e-12
        if ok_a and ok_b:
            out.append((a, b))
    return sorted(out)


def test_grid_search_series_path_against_oracle():
    edges = [Edge("e1", "s", "a", C.zero()), Edge("e2", "a", "t", C.zero())]
    inst = MarketInstance(["s", "a", "t"], edges, [Commodity("s", "t", D.uniform(1.0, 1.0))])
    res = grid_search_equilibria(inst, step=0.25)
    found = sorted((e["prices"]["e1"], e["prices"]["e2"]) for e in res.equilibria)
    assert found == pytest.approx(_series_oracle(res.ticks, 0.25))


def test_no_equilibrium_fixture_grid():
    res = grid_search_equilibria(scenarios.build("no-equilibrium"), step=0.25)
    assert not res.found
