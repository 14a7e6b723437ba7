"""One test per acceptance criterion; each prints a single PASS/FAIL line."""

import math
import time
import warnings

import numpy as np
import pytest

from netprice import scenarios
from netprice.balance import balance_prices
from netprice.bundles import BundleCurve, ascending_invariant_violations, ascending_prices, bundle_equilibrium, item_values
from netprice.efficiency import efficiency_ratio, theoretical_bound
from netprice.equilibrium import (
    INTERIOR_ROOT,
    capacitated_elastic_equilibrium,
    condition_residual,
    find_equilibrium,
    multi_source_equilibrium,
)
from netprice.errors import InapplicableError, NoEquilibriumError
from netprice.flow import MinCostCurve, min_cost_flow, welfare_optimum
from netprice.market import as_bundle_market, simple_paths
from netprice.verify import check_all, check_seller_stability, grid_search_equilibria

from instances import (
    random_bundle_market,
    random_concave_demand,
    random_fced_demand,
    random_fp_demand,
    random_mhr_demand,
    random_power_market,
    random_pwl_market,
)


@pytest.fixture
def report(capsys, request):
    """Call with (number, ok, detail); prints the line and fails the test when ok is false."""

    def emit(number, ok, detail=""):
        with capsys.disabled():
            print(f"\ncriterion {number:2d} {'PASS' if ok else 'FAIL'}  {request.node.name}  {detail}")
        assert ok, detail

    return emit


def _quiet(fn, *args):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fn(*args)


def test_c01_single_good(report):
    t0 = time.perf_counter()
    inst = scenarios.build("single-good")
    eq = find_equilibrium(inst)
    ok = (abs(eq.magnitude - 0.25) <= 1e-6 and abs(eq.prices["e1"] - 0.75) <= 1e-6
          and abs(eq.profit(inst, "e1") - 0.125) <= 1e-6)
    res = check_seller_stability(inst, {"e1": 2 / 3}, min_cost_flow(inst, 1 / 3))
    ok = ok and not res.passed and res.witness["profit"] >= 1 / 8 - 1e-6
    dt = time.perf_counter() - t0
    report(1, ok and dt < 1.0, f"x={eq.magnitude!r} p={eq.prices['e1']!r} witness={res.witness} {dt:.2f}s")


def test_c02_concave_tight(report):
    t0 = time.perf_counter()
    bad = []
    for M in range(1, 9):
        inst = scenarios.build("concave-tight", {"M": M})
        eq = find_equilibrium(inst)
        eta = efficiency_ratio(inst, eq).eta
        if abs(eq.magnitude - 1) > 1e-6 or any(abs(p - (2 + 1 / M)) > 1e-6 for p in eq.prices.values()) \
                or abs(eta - (1 + M / 2)) > 1e-6:
            bad.append((M, eq.magnitude, eta))
    dt = time.perf_counter() - t0
    report(2, not bad and dt < 5.0, f"failures={bad} {dt:.2f}s")


def test_c03_mhr_tight(report):
    bad = []
    for x_star in (50.0, 200.0):
        for M in range(1, 7):
            inst = scenarios.build("mhr-tight", {"M": M, "x_star": x_star})
            eta = efficiency_ratio(inst, find_equilibrium(inst)).eta
            if abs(eta - (1 + M)) > 0.01 * (1 + M):
                bad.append((M, x_star, eta))
    report(3, not bad, f"failures={bad}")


_CLASSES = {
    "concave": (random_concave_demand, "concave", lambda d: None),
    "mhr": (random_mhr_demand, "mhr", lambda d: None),
    "f_p": (random_fp_demand, "f_p", lambda d: d.alpha),
    "f_ced": (random_fced_demand, "f_ced", lambda d: d.alpha),
}


def test_c04_bounds_hold_on_random_instances(report):
    t0 = time.perf_counter()
    worst, bad, verified, skipped = -math.inf, [], 0, 0
    for name, (make, tag, alpha_of) in _CLASSES.items():
        rng = np.random.default_rng(4000 + len(name))
        for _ in range(200):
            dem = make(rng)
            inst = random_power_market(rng, dem, max_nodes=6)
            try:
                eq = _quiet(find_equilibrium, inst)
            except NoEquilibriumError:
                skipped += 1
                continue
            if not check_all(inst, eq.prices, eq.flow, grid=200).passed:
                bad.append((name, "unverified"))
                continue
            verified += 1
            eta = efficiency_ratio(inst, eq).eta
            bound = theoretical_bound(tag, eq.M, alpha_of(dem))
            worst = max(worst, eta - bound)
            if eta > bound + 1e-4:
                bad.append((name, eta, bound))
    dt = time.perf_counter() - t0
    report(4, not bad and dt < 120, f"verified={verified} skipped={skipped} worst eta-bound={worst:.3g} "
                                     f"failures={bad[:5]} {dt:.1f}s")


def test_c05_interior_root_residual(report):
    worst, count = 0.0, 0
    instances = [scenarios.build("single-good"), scenarios.build("unbounded")]
    instances += [scenarios.build("concave-tight", {"M": M}) for M in (1, 4)]
    rng = np.random.default_rng(5)
    for _ in range(60):
        make = (random_concave_demand, random_mhr_demand, random_fp_demand)[int(rng.integers(3))]
        instances.append(random_power_market(rng, make(rng), max_nodes=6))
    for _ in range(30):
        instances.append(random_pwl_market(rng))
    for inst in instances:
        try:
            eq = _quiet(find_equilibrium, inst)
        except NoEquilibriumError:
            continue
        if eq.kind == INTERIOR_ROOT:
            count += 1
            worst = max(worst, condition_residual(inst, eq))
    report(5, count > 0 and worst <= 1e-6, f"interior roots={count} worst residual={worst:.3g}")


def test_c06_min_cost_flow_kkt(report):
    rng = np.random.default_rng(6)
    spread_worst, deriv_worst, shape_bad = 0.0, 0.0, 0
    for _ in range(100):
        inst = random_power_market(rng, random_concave_demand(rng), max_nodes=7)
        curve = MinCostCurve(inst)
        x = float(rng.uniform(0.2, 2.0))
        sol = curve.solve(x)
        sums = [sum(inst.cost(e).marginal(sol.edge_flow[e]) for e in p.edges) for p in sol.paths if p.amount > 1e-9]
        spread_worst = max(spread_worst, max(sums) - min(sums))
        xs = np.linspace(0.0, 2.0, 64)
        R = np.array([curve.R(v) for v in xs])
        r = np.array([curve.r(v) for v in xs])
        if np.any(np.diff(R, 2) < -1e-8) or np.any(np.diff(r) < -1e-8):
            shape_bad += 1
        h = 1e-5
        fd = (curve.R(x + h) - curve.R(x - h)) / (2 * h)
        deriv_worst = max(deriv_worst, abs(fd - curve.r(x)))
    ok = spread_worst <= 1e-6 and shape_bad == 0 and deriv_worst <= 1e-4
    report(6, ok, f"spread={spread_worst:.3g} shape failures={shape_bad} fd gap={deriv_worst:.3g}")


def test_c07_balancing(report):
    rng = np.random.default_rng(7)
    path_gap, range_gap, cheaper = 0.0, 0.0, 0
    for _ in range(50):
        inst = random_pwl_market(rng)
        flow = min_cost_flow(inst, float(rng.uniform(0.2, 3.0)))
        lo, hi = flow.marginal_minus, flow.marginal_plus
        c = inst.commodities[0]
        all_routes = simple_paths(inst, c.source, c.sink)
        used = {tuple(p.edges) for p in flow.paths if p.amount > 1e-12}
        for target in lo + rng.random(10) * (hi - lo):
            vals = balance_prices(inst, flow, float(target))
            for p in used:
                path_gap = max(path_gap, abs(sum(vals[e] for e in p) - target))
            for e in inst.edges:
                fe = flow.edge_flow[e.id]
                left = e.cost.marginal(fe, "left") if fe > 0 else e.cost.marginal(0.0, "right")
                right = e.cost.marginal(fe, "right")
                range_gap = max(range_gap, left - vals[e.id], vals[e.id] - right)
            cheaper += sum(1 for p in all_routes if p not in used and sum(vals[e] for e in p) < target - 1e-8)
    ok = path_gap <= 1e-8 and range_gap <= 1e-12 and cheaper == 0
    report(7, ok, f"path gap={path_gap:.3g} interval gap={range_gap:.3g} cheaper zero-flow paths={cheaper}")


def _invariant_failures(market, x_values):
    curve = BundleCurve(market)
    out = []
    for x in x_values:
        alloc = curve.solve(x)
        for target in (alloc.marginal_minus, 0.5 * (alloc.marginal_minus + alloc.marginal_plus)):
            if market.demand.value(x) < target:
                continue
            _, state = ascending_prices(market, alloc, item_values(market, alloc, target))
            out += ascending_invariant_violations(market, alloc, state)
    return out


def test_c08_ascending_invariants(report):
    rng = np.random.default_rng(8)
    violations, solved = [], 0
    for _ in range(50):
        m = random_bundle_market(rng)
        try:
            eq = bundle_equilibrium(m)
        except NoEquilibriumError:
            continue
        solved += 1
        xs = [eq.magnitude] + [f * m.demand.T for f in (0.2, 0.5, 0.8)]
        violations += _invariant_failures(m, [x for x in xs if x > 0])
    price_gap, compared = 0.0, 0
    for _ in range(40):
        g = random_power_market(rng, random_concave_demand(rng), max_nodes=6) if rng.random() < 0.5 \
            else random_pwl_market(rng, max_nodes=6)
        try:
            a = _quiet(find_equilibrium, g)
        except NoEquilibriumError:
            continue
        b = _quiet(bundle_equilibrium, as_bundle_market(g))
        compared += 1
        price_gap = max(price_gap, abs(a.magnitude - b.magnitude), *(abs(b.prices[e] - p) for e, p in a.prices.items()))
    ok = not violations and solved > 0 and compared > 0 and price_gap <= 1e-6
    report(8, ok, f"bundle markets solved={solved} violations={violations[:3]} "
                  f"graph comparisons={compared} worst gap={price_gap:.3g}")


def test_c09_no_equilibrium(report):
    t0 = time.perf_counter()
    res = grid_search_equilibria(scenarios.build("no-equilibrium"), step=0.05)
    dt = time.perf_counter() - t0
    report(9, not res.found and dt < 60, f"grid points={res.points} screened={res.screened} "
                                         f"found={len(res.equilibria)} {dt:.1f}s")


def test_c10_two_source(report):
    inst = scenarios.build("two-source-inefficient")
    flow = welfare_optimum(inst)
    prices = {e.id: e.cost.marginal(flow.edge_flow[e.id], "right") for e in inst.edges}
    rep = check_all(inst, prices, flow)
    w = rep.checks["seller_stability"].witness or {}
    try:
        multi_source_equilibrium(inst)
        inapplicable = False
    except InapplicableError:
        inapplicable = True
    ok = not rep.passed and w.get("edge") == "e1" and abs(w.get("price", 0) - 0.75) <= 1e-6 and inapplicable
    report(10, ok, f"witness={w} inapplicable={inapplicable}")


def test_c11_capacitated(report):
    bad = []
    for M, r in ((1, 2), (2, 3), (3, 5)):
        inst = scenarios.build("capacitated", {"M": M, "r": r})
        eq = capacitated_elastic_equilibrium(inst)
        passed = check_all(inst, eq.prices, eq.flow).passed
        eta = efficiency_ratio(inst, eq).eta
        if not passed or abs(eta - 1) > 1e-6:
            bad.append((M, r, passed, eta))
    report(11, not bad, f"failures={bad}")


def test_c12_unbounded_trend(report):
    etas = []
    for r in (2.5, 2.2, 2.05):
        inst = scenarios.build("unbounded", {"r": r})
        etas.append(efficiency_ratio(inst, _quiet(find_equilibrium, inst)).eta)
    ok = etas[0] < etas[1] < etas[2] and etas[2] > 5 * etas[0]
    report(12, ok, f"eta={etas}")
