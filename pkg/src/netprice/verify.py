"""Independent checks of a candidate (prices, flow) outcome.

The verifier never calls the equilibrium constructors.  It enumerates the
routes each commodity can buy (simple paths, or bundles), recomputes buyer
choices from prices alone, and scores each seller's unilateral price
deviations with the split among equally cheap routes that suits the
deviator best.  A candidate passes only if no such deviation pays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog, minimize_scalar

from .costs import LEFT, RIGHT
from .errors import DomainError
from .market import BUNDLE, FlowSolution, MarketInstance, PathFlow, natural_key, simple_paths

DEFAULT_TOL = 1e-6
DEFAULT_GRID = 1000
_TIE = 1e-9
_REFINE = 8  # best grid points whose neighbouring intervals get a continuous search


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float = 0.0
    witness: dict | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "margin": self.margin,
                "witness": self.witness, "notes": list(self.notes)}


@dataclass
class VerificationReport:
    checks: dict
    tol: float
    grid: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks.values() if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "grid": self.grid,
            "checks": {k: v.to_dict() for k, v in self.checks.items()},
        }


# -- routes ------------------------------------------------------------------------

@dataclass(frozen=True)
class _Route:
    commodity: int
    items: tuple

    def price(self, prices: Mapping[str, float]) -> float:
        return sum(prices[e] for e in self.items)


def routes(inst: MarketInstance) -> list[_Route]:
    """Every route a buyer may purchase, per commodity, in a fixed order."""
    if inst.mode == BUNDLE:
        return [_Route(0, tuple(b)) for b in inst.bundles]
    out = []
    for k, c in enumerate(inst.commodities):
        for p in simple_paths(inst, c.source, c.sink):
            out.append(_Route(k, p))
    return out


def _magnitudes(inst: MarketInstance, flow: FlowSolution) -> list[float]:
    if flow.commodity_magnitudes and len(flow.commodity_magnitudes) == len(inst.commodities):
        return list(flow.commodity_magnitudes)
    if len(inst.commodities) == 1:
        return [flow.magnitude]
    amounts = [0.0] * len(inst.commodities)
    for p in flow.paths:
        amounts[p.commodity] += p.amount
    return amounts


def _tie(a: float, b: float) -> bool:
    return abs(a - b) <= _TIE * max(1.0, abs(a), abs(b))


def _residual_ok(inst: MarketInstance, route: _Route, flow: FlowSolution, tol: float) -> bool:
    for e in route.items:
        cap = inst.cost(e).capacity
        if math.isfinite(cap) and flow.edge_flow.get(e, 0.0) >= cap - tol:
            return False
    return True


def flow_from_paths(inst: MarketInstance, paths: Sequence[PathFlow], magnitudes: Sequence[float] | None = None) -> FlowSolution:
    """FlowSolution with edge amounts summed from a path list."""
    edge_flow = {e.id: 0.0 for e in inst.edges}
    for p in paths:
        for e in p.edges:
            edge_flow[e] += p.amount
    if magnitudes is None:
        magnitudes = [0.0] * len(inst.commodities)
        for p in paths:
            magnitudes[p.commodity] += p.amount
    return FlowSolution(
        edge_flow=edge_flow,
        paths=list(paths),
        magnitude=float(sum(magnitudes)),
        cost=inst.total_cost(edge_flow),
        commodity_magnitudes=tuple(magnitudes),
    )


# -- buyers ------------------------------------------------------------------------

def check_buyer_best_response(inst: MarketInstance, prices: Mapping[str, float], flow: FlowSolution,
                              tol: float = DEFAULT_TOL) -> CheckResult:
    """Buyers hold only cheapest available routes and the marginal buyer is indifferent.

    With capacities a route counts as available only while all its items
    have room.
    """
    all_routes = routes(inst)
    mags = _magnitudes(inst, flow)
    worst = 0.0
    witness = None
    for k, c in enumerate(inst.commodities):
        mine = [r for r in all_routes if r.commodity == k]
        keyed = {tuple(sorted(r.items, key=natural_key)): r for r in mine}
        used = []
        for p in flow.paths:
            if p.commodity != k or p.amount <= 0:
                continue
            key = tuple(sorted(p.edges, key=natural_key))
            if key not in keyed:
                return CheckResult("buyer_best_response", False, math.inf,
                                   {"reason": "flow path is not a route", "path": list(p.edges)})
            used.append(keyed[key])
        avail = [r.price(prices) for r in mine if _residual_ok(inst, r, flow, tol)]
        avail_min = min(avail) if avail else math.inf
        x = mags[k]
        d = c.demand
        lam = d.value(min(max(x, 0.0), d.T))
        if used:
            used_max = max(r.price(prices) for r in used)
            gap = used_max - avail_min
            if gap > worst:
                worst, witness = gap, {"commodity": k, "reason": "a cheaper route is available",
                                       "used_price": used_max, "cheapest_price": avail_min}
            gap = used_max - lam
            if gap > worst:
                worst, witness = gap, {"commodity": k, "reason": f"value({x!r})={lam!r} below route price {used_max!r}"}
        if x < d.T - tol:
            gap = lam - avail_min
            if gap > worst:
                worst, witness = gap, {"commodity": k, "reason": f"value({x!r})={lam!r} exceeds cheapest price {avail_min!r}",
                                       "value": lam, "cheapest_price": avail_min}
    return CheckResult("buyer_best_response", worst <= tol, worst, witness if worst > tol else None)


# -- sellers -----------------------------------------------------------------------

def _demand_interval(d, price: float) -> tuple[float, float]:
    """All buyer masses consistent with a cheapest price: {x : value(x) = price} or its limit."""
    hi = d.quantity(price)
    lo = d.quantity(price + _TIE * max(1.0, abs(price)))
    return min(lo, hi), hi


def _best_amount(cost, price: float, lo: float, hi: float) -> tuple[float, float]:
    """Amount in [lo, hi] maximizing price*x - C(x), and that profit."""
    def profit(x):
        return price * x - cost.cost(x)

    if hi <= lo:
        return lo, profit(lo)
    if cost.marginal(hi, LEFT) <= price:
        x = hi
    elif cost.marginal(lo, RIGHT) >= price:
        x = lo
    else:
        a, b = lo, hi
        for _ in range(100):
            mid = 0.5 * (a + b)
            if cost.marginal(mid, RIGHT) < price:
                a = mid
            else:
                b = mid
        x = a
    cands = [lo, hi, x]
    best = max(cands, key=profit)
    return best, profit(best)


class _SellerView:
    """Route prices with one seller's own price taken out."""

    def __init__(self, inst, all_routes, prices, edge):
        self.inst = inst
        self.edge = edge
        self.by_k = []
        for k in range(len(inst.commodities)):
            with_e, without = math.inf, math.inf
            for r in all_routes:
                if r.commodity != k:
                    continue
                p = r.price(prices)
                if edge in r.items:
                    with_e = min(with_e, p - prices[edge])
                else:
                    without = min(without, p)
            self.by_k.append((with_e, without))

    def response(self, q: float) -> tuple[float, float]:
        lo = hi = 0.0
        for k, (a, b) in enumerate(self.by_k):
            if math.isinf(a):
                continue
            d = self.inst.commodities[k].demand
            mine = a + q
            if mine < b and not _tie(mine, b):
                dlo, dhi = _demand_interval(d, mine)
                lo += dlo
                hi += dhi
            elif _tie(mine, b):
                hi += _demand_interval(d, min(mine, b))[1]
        return lo, hi

    def thresholds(self) -> list[float]:
        out = []
        for k, (a, b) in enumerate(self.by_k):
            if math.isinf(a):
                continue
            d = self.inst.commodities[k].demand
            levels = [d.value(0.0), d.value(d.T)] + [d.value(x) for x in d.breakpoints()]
            if math.isfinite(b):
                levels.append(b)
            out += [lv - a for lv in levels]
        return out


class _CapacitatedView:
    """Deviation response when item capacities bind (single commodity).

    Buyers fill routes from the cheapest price level up; within a level the
    split maximizes the deviator's flow.  Levels are processed in order so
    a saturated cheap route pushes buyers to dearer ones.
    """

    def __init__(self, inst, all_routes, prices, edge):
        if len(inst.commodities) != 1:
            raise DomainError("capacitated deviation scan supports one commodity")
        self.inst = inst
        self.edge = edge
        self.routes = all_routes
        self.base = [r.price(prices) - (prices[edge] if edge in r.items else 0.0) for r in all_routes]
        self.has = [edge in r.items for r in all_routes]
        self.items = sorted({e for r in all_routes for e in r.items}, key=natural_key)
        self.caps = [inst.cost(e).capacity for e in self.items]
        self._cache: dict = {}

    def _lp(self, group: tuple, resid: tuple, want: float):
        key = (group, resid, round(want, 13))
        if key in self._cache:
            return self._cache[key]
        n = len(group)
        rows, rhs = [], []
        for j, e in enumerate(self.items):
            if math.isfinite(resid[j]):
                rows.append([1.0 if e in self.routes[r].items else 0.0 for r in group])
                rhs.append(resid[j])
        rows.append([1.0] * n)
        rhs.append(want)
        c = [-(1.0 + (1e-6 if self.has[r] else 0.0)) for r in group]
        res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=[(0, None)] * n, method="highs")
        y = [max(float(v), 0.0) for v in res.x] if res.status == 0 else [0.0] * n
        self._cache[key] = y
        return y

    def response(self, q: float) -> tuple[float, float]:
        d = self.inst.demand
        price = [b + (q if h else 0.0) for b, h in zip(self.base, self.has)]
        order = sorted(range(len(price)), key=lambda r: price[r])
        resid = list(self.caps)
        served = 0.0
        through = 0.0
        i = 0
        while i < len(order):
            level = price[order[i]]
            group = []
            while i < len(order) and _tie(price[order[i]], level):
                group.append(order[i])
                i += 1
            want = d.quantity(level) - served
            if want <= 1e-15:
                break
            y = self._lp(tuple(group), tuple(resid), want)
            for r, amt in zip(group, y):
                served += amt
                if self.has[r]:
                    through += amt
                for j, e in enumerate(self.items):
                    if e in self.routes[r].items:
                        resid[j] -= amt
        return through, through

    def thresholds(self) -> list[float]:
        out = []
        d = self.inst.demand
        levels = [d.value(0.0), d.value(d.T)] + [d.value(x) for x in d.breakpoints()]
        for b, h in zip(self.base, self.has):
            if h:
                out += [lv - b for lv in levels]
                out += [b2 - b for b2, h2 in zip(self.base, self.has) if not h2]
        return out


def deviation_candidates(view, current: float, marginal: Sequence[float], top: float, grid: int) -> list[float]:
    cands = {0.0, float(current)} | {float(m) for m in marginal if math.isfinite(m)}
    if grid > 0 and top > 0:
        cands.update(np.geomspace(top * 1e-6, top, grid).tolist())
    for t in view.thresholds():
        if math.isfinite(t) and t >= 0:
            cands.add(t)
            cands.add(t * (1 - 1e-9))
    return sorted(c for c in cands if c >= 0 and math.isfinite(c))


def _deviation_profit(view, cost, q: float) -> tuple[float, float]:
    lo, hi = view.response(q)
    return _best_amount(cost, q, lo, hi)


def check_seller_stability(inst: MarketInstance, prices: Mapping[str, float], flow: FlowSolution,
                           grid: int = DEFAULT_GRID, tol: float = DEFAULT_TOL, refine: bool = True) -> CheckResult:
    """No seller gains more than ``tol`` from any scanned price deviation."""
    all_routes = routes(inst)
    top = 2.0 * max(c.demand.value(0.0) for c in inst.commodities)
    capacitated = inst.has_capacities
    worst = -math.inf
    witness = None
    notes = []
    for e in inst.edges:
        cost = e.cost
        x_now = flow.edge_flow.get(e.id, 0.0)
        now = prices[e.id] * x_now - cost.cost(x_now)
        view = (_CapacitatedView if capacitated else _SellerView)(inst, all_routes, prices, e.id)
        marg = [cost.marginal(x_now, LEFT), cost.marginal(x_now, RIGHT), cost.marginal(0.0, RIGHT)]
        cands = deviation_candidates(view, prices[e.id], marg, top, grid)
        best_q, best = None, -math.inf
        values = []
        for q in cands:
            _, gain = _deviation_profit(view, cost, q)
            values.append(gain)
            if gain > best:
                best_q, best = q, gain
        if refine and not capacitated:
            top_idx = sorted(range(len(cands)), key=lambda i: values[i], reverse=True)[:_REFINE]
            spans = {(cands[max(i - 1, 0)], cands[i]) for i in top_idx} | {(cands[i], cands[min(i + 1, len(cands) - 1)]) for i in top_idx}
            for a, b in sorted(spans):
                if b - a <= 1e-12 * max(1.0, b):
                    continue
                res = minimize_scalar(lambda q: -_deviation_profit(view, cost, q)[1], bounds=(a, b),
                                      method="bounded", options={"xatol": 1e-10 * max(1.0, b)})
                if res.success and -res.fun > best:
                    best_q, best = float(res.x), float(-res.fun)
        margin = best - now
        if margin > worst:
            worst = margin
            witness = {"edge": e.id, "price": best_q, "profit": best, "old_price": prices[e.id],
                       "old_profit": now, "gain": margin}
    passed = worst <= tol
    return CheckResult("seller_stability", passed, worst, None if passed else witness, notes)


def check_local_dominance(inst: MarketInstance, prices: Mapping[str, float], flow: FlowSolution,
                          eps: float | None = None, tol: float = DEFAULT_TOL) -> CheckResult:
    """No seller gains when ``eps`` of buyers move between two flow paths at fixed prices."""
    paths = [p for p in flow.paths if p.amount > 0]
    if eps is None:
        eps = flow.magnitude / 100.0
    worst, witness, notes = 0.0, None, []
    if len(paths) < 2 or eps <= 0:
        return CheckResult("local_dominance", True, 0.0, None, ["vacuous: fewer than two flow paths"])
    for i, src in enumerate(paths):
        for j, dst in enumerate(paths):
            if i == j or src.commodity != dst.commodity:
                continue
            if eps > src.amount:
                notes.append(f"shift {i}->{j} skipped: eps {eps!r} exceeds path flow {src.amount!r}")
                continue
            delta: dict = {}
            for e in src.edges:
                delta[e] = delta.get(e, 0.0) - eps
            for e in dst.edges:
                delta[e] = delta.get(e, 0.0) + eps
            for e, dx in delta.items():
                if dx == 0:
                    continue
                cost = inst.cost(e)
                x0 = flow.edge_flow.get(e, 0.0)
                x1 = max(x0 + dx, 0.0)
                new_cost = cost.cost(x1)
                if math.isinf(new_cost):
                    notes.append(f"shift {i}->{j} skipped: exceeds capacity of {e}")
                    break
                gain = prices[e] * (x1 - x0) - (new_cost - cost.cost(x0))
                if gain > worst:
                    worst = gain
                    witness = {"edge": e, "from": list(src.edges), "to": list(dst.edges), "eps": eps, "gain": gain}
    return CheckResult("local_dominance", worst <= tol, worst, witness if worst > tol else None, notes)


def check_properties(inst: MarketInstance, prices: Mapping[str, float], flow: FlowSolution,
                     tol: float = DEFAULT_TOL) -> CheckResult:
    """Unused items priced at their marginal cost at zero; used items at least at marginal cost."""
    worst, witness = 0.0, None
    scale = max(1.0, flow.magnitude)
    for e in inst.edges:
        p = prices.get(e.id)
        if p is None or not math.isfinite(p) or p < -tol:
            return CheckResult("properties", False, math.inf, {"edge": e.id, "reason": "price missing, negative or infinite"})
        x = flow.edge_flow.get(e.id, 0.0)
        if x <= 1e-12 * scale:
            gap = abs(p - e.cost.marginal(0.0, RIGHT))
            if gap > worst:
                worst, witness = gap, {"edge": e.id, "reason": "unused edge not priced at marginal cost at 0",
                                       "price": p, "marginal": e.cost.marginal(0.0, RIGHT)}
        else:
            floor = e.cost.marginal(x, LEFT)
            gap = floor - p
            if gap > worst:
                worst, witness = gap, {"edge": e.id, "reason": "price below marginal cost", "price": p,
                                       "marginal": floor}
    return CheckResult("properties", worst <= tol, worst, witness if worst > tol else None)


def check_all(inst: MarketInstance, prices: Mapping[str, float], flow: FlowSolution, grid: int = DEFAULT_GRID,
              eps: float | None = None, tol: float = DEFAULT_TOL, checks: Sequence[str] | None = None,
              refine: bool = True) -> VerificationReport:
    names = checks or ("buyer_best_response", "seller_stability", "local_dominance", "properties")
    out = {}
    for name in names:
        if name == "buyer_best_response":
            out[name] = check_buyer_best_response(inst, prices, flow, tol)
        elif name == "seller_stability":
            out[name] = check_seller_stability(inst, prices, flow, grid, tol, refine)
        elif name == "local_dominance":
            out[name] = check_local_dominance(inst, prices, flow, eps, tol)
        elif name == "properties":
            out[name] = check_properties(inst, prices, flow, tol)
        else:
            raise DomainError(f"unknown check {name!r}")
    return VerificationReport(out, tol, grid)


def verify_solution(inst: MarketInstance, eq, **kwargs) -> VerificationReport:
    return check_all(inst, eq.prices, eq.flow, **kwargs)


# -- exhaustive grid search ----------------------------------------------------------

@dataclass
class GridSearchResult:
    step: float
    ticks: int
    points: int
    screened: int
    flow_rejected: int
    verified_rejected: int
    equilibria: list

    @property
    def found(self) -> bool:
        return bool(self.equilibria)

    def to_dict(self) -> dict:
        return {"step": self.step, "ticks": self.ticks, "points": self.points, "screened": self.screened,
                "flow_rejected": self.flow_rejected, "verified_rejected": self.verified_rejected,
                "equilibria": self.equilibria}


class _GridModel:
    """Prices in ticks; uniform demands; linear costs; uncapacitated routes."""

    def __init__(self, inst: MarketInstance, step: float):
        for c in inst.commodities:
            if c.demand.kind != "uniform":
                raise DomainError("grid search needs uniform demands")
        for e in inst.edges:
            if e.cost.kind not in ("zero", "linear") or math.isfinite(e.cost.capacity):
                raise DomainError("grid search needs zero or linear costs")
        self.inst = inst
        self.step = step
        self.items = [e.id for e in inst.edges]
        self.n = len(self.items)
        self.slope = np.array([e.cost.marginal(0.0, RIGHT) / step for e in inst.edges])
        self.routes = routes(inst)
        self.K = len(inst.commodities)
        self.value = np.array([c.demand.value(0.0) / step for c in inst.commodities])
        self.pop = np.array([c.demand.T for c in inst.commodities])
        self.incidence = np.array([[1 if e in r.items else 0 for e in self.items] for r in self.routes])
        self.rc = np.array([r.commodity for r in self.routes])

    def _stats(self, P: np.ndarray, e: int):
        """Per commodity, cheapest route price with and without item e, excluding e's own price."""
        R = P @ self.incidence.T  # points x routes
        own = P[:, e][:, None] * self.incidence[:, e][None, :]
        base = R - own
        A = np.full((P.shape[0], self.K), np.inf)
        B = np.full((P.shape[0], self.K), np.inf)
        for r in range(len(self.routes)):
            k = self.rc[r]
            if self.incidence[r, e]:
                A[:, k] = np.minimum(A[:, k], base[:, r])
            else:
                B[:, k] = np.minimum(B[:, k], base[:, r])
        return A, B

    def deviation_value(self, P: np.ndarray, e: int) -> np.ndarray:
        """Best tie-optimistic deviation profit of item e, in tick units."""
        A, B = self._stats(P, e)
        t = np.minimum(B, self.value[None, :]) - A
        best = np.zeros(P.shape[0])
        for k in range(self.K):
            tk = t[:, k]
            ok = np.isfinite(tk) & (tk >= 0)
            H = np.zeros(P.shape[0])
            for j in range(self.K):
                H += np.where(np.isfinite(t[:, j]) & (t[:, j] >= tk), self.pop[j], 0.0)
            cand = np.where(ok, (tk - self.slope[e]) * H, 0.0)
            best = np.maximum(best, cand)
        return best

    def current_bounds(self, P: np.ndarray, e: int):
        """Smallest and largest flow item e can carry in some buyer best response."""
        A, B = self._stats(P, e)
        mine = A + P[:, e][:, None]
        hi = np.zeros(P.shape[0])
        lo = np.zeros(P.shape[0])
        for k in range(self.K):
            cheapest = np.minimum(mine[:, k], B[:, k])
            buys = cheapest <= self.value[k]
            strict = cheapest < self.value[k]
            hi += np.where(buys & (mine[:, k] <= B[:, k]), self.pop[k], 0.0)
            lo += np.where(strict & (mine[:, k] < B[:, k]), self.pop[k], 0.0)
        return lo, hi

    def best_current(self, P: np.ndarray, e: int) -> np.ndarray:
        lo, hi = self.current_bounds(P, e)
        margin = P[:, e] - self.slope[e]
        return np.where(margin >= 0, margin * hi, margin * lo)


def grid_search_equilibria(inst: MarketInstance, step: float = 0.05, max_price: float | None = None,
                           tol: float = DEFAULT_TOL, verify_grid: int = DEFAULT_GRID,
                           chunk: int = 2_000_000) -> GridSearchResult:
    """Search every price vector on a grid for a pure equilibrium.

    Prices above the largest buyer value all behave alike, so the grid stops
    one step above it.  Each seller's best tie-optimistic deviation profit
    is a maximum over route-price thresholds; a price vector survives only
    if every seller's best achievable current profit reaches it.  The last
    item's admissible prices are solved for in closed form; survivors get a
    feasibility LP over buyer best-response flows and then the full
    verifier.
    """
    model = _GridModel(inst, step)
    if max_price is None:
        max_price = max(c.demand.value(0.0) for c in inst.commodities) + step
    ticks = int(math.floor(max_price / step + 1e-9)) + 1
    n = model.n
    free = n - 1
    tol_t = tol / step
    points = ticks ** (n - 1)
    screened = flow_rejected = verified_rejected = 0
    found = []
    for start in range(0, points, chunk):
        idx = np.arange(start, min(points, start + chunk))
        P = np.zeros((idx.size, n))
        rest = idx.copy()
        for j in range(n - 2, -1, -1):
            P[:, j] = rest % ticks
            rest //= ticks
        survivors = _free_item_range(model, P, free, ticks, tol_t)
        screened += survivors.shape[0]
        for e in range(n):
            if survivors.shape[0] == 0:
                break
            D = model.deviation_value(survivors, e)
            keep = model.best_current(survivors, e) >= D - tol_t
            survivors = survivors[keep]
        if survivors.shape[0]:
            ok = _batched_flow_feasible(model, survivors, tol_t)
            flow_rejected += int((~ok).sum())
            survivors = survivors[ok]
        for row in survivors:
            prices = {item: float(row[i]) * step for i, item in enumerate(model.items)}
            flow = _feasible_flow(model, row, tol_t)
            if flow is None:
                flow_rejected += 1
                continue
            rep = check_all(inst, prices, flow, grid=verify_grid, tol=tol,
                            checks=("buyer_best_response", "seller_stability"))
            if rep.passed:
                found.append({"prices": prices, "paths": [(list(p.edges), p.amount) for p in flow.paths]})
            else:
                verified_rejected += 1
    return GridSearchResult(step, ticks, points * ticks, screened, flow_rejected, verified_rejected, found)


def _free_item_range(model: _GridModel, P: np.ndarray, f: int, ticks: int, tol_t: float) -> np.ndarray:
    """Expand each partial price vector by the ticks of item f that may survive screening.

    Item f's own deviation value does not depend on its price.  Its best
    current profit is (p - a) * H(p), with H stepping down at each
    commodity threshold, so the admissible prices form one interval per
    step.  Threshold ticks are added outright; the exact screen later
    removes any that fail.
    """
    D = model.deviation_value(P, f)
    A, B = model._stats(P, f)
    t = np.minimum(B, model.value[None, :]) - A
    t = np.where(np.isfinite(t), t, -np.inf)
    a = model.slope[f]
    npts = P.shape[0]
    order = np.argsort(-t, axis=1)
    t_desc = np.take_along_axis(t, order, axis=1)
    pop_desc = model.pop[order]
    top = float(ticks - 1)
    los, his = [], []
    for j in range(model.K + 1):
        upper = t_desc[:, j - 1] if j > 0 else np.full(npts, np.inf)
        lower = t_desc[:, j] if j < model.K else np.full(npts, -np.inf)
        H = pop_desc[:, :j].sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            need = np.where(H > 0, a + (D - tol_t) / np.where(H > 0, H, 1.0),
                            np.where(D <= tol_t, -np.inf, np.inf))
        low = np.maximum(np.floor(lower + 1e-9) + 1, np.ceil(need - 1e-9))
        high = np.minimum(np.floor(upper + 1e-9), top)
        los.append(np.maximum(low, 0.0))
        his.append(high)
    for j in range(model.K):
        edge = np.round(t_desc[:, j])
        ok = np.isfinite(t_desc[:, j]) & (np.abs(t_desc[:, j] - edge) <= 1e-9) & (edge >= 0) & (edge <= top)
        los.append(np.where(ok, edge, 1.0))
        his.append(np.where(ok, edge, 0.0))
    lo_all = np.nan_to_num(np.stack(los, axis=1), posinf=top + 1, neginf=0.0)
    hi_all = np.nan_to_num(np.stack(his, axis=1), posinf=top, neginf=-1.0)
    counts = np.clip(hi_all - lo_all + 1, 0, None).astype(np.int64)
    flat = counts.ravel()
    total = int(flat.sum())
    if total == 0:
        return np.zeros((0, P.shape[1]))
    rows = np.repeat(np.repeat(np.arange(npts), lo_all.shape[1]), flat)
    starts = np.repeat(lo_all.ravel(), flat)
    offsets = np.arange(total) - np.repeat(np.cumsum(flat) - flat, flat)
    out = P[rows].copy()
    out[:, f] = starts + offsets
    return np.unique(out, axis=0) if out.shape[0] < 5_000_000 else out


def _batched_flow_feasible(model: _GridModel, S: np.ndarray, tol_t: float, max_vars: int = 4) -> np.ndarray:
    """Vectorized version of the flow feasibility LP, by vertex enumeration.

    Points are grouped by which routes are tied cheapest and whether each
    commodity buys strictly.  Within a group the LP has the same shape, and
    its box-bounded feasible set is nonempty iff some basic solution is
    feasible.  Groups with more than ``max_vars`` tied routes fall back to
    the per-point LP.
    """
    from itertools import combinations

    npts = S.shape[0]
    R = S @ model.incidence.T
    nr = len(model.routes)
    cheapest = np.full((npts, model.K), np.inf)
    for r in range(nr):
        k = model.rc[r]
        cheapest[:, k] = np.minimum(cheapest[:, k], R[:, r])
    close = 1e-9 * np.maximum(1.0, np.abs(R))
    tied = np.abs(R - cheapest[:, model.rc]) <= close
    buys = cheapest <= model.value[None, :] + 1e-9
    strict = cheapest < model.value[None, :] - 1e-9
    tied &= buys[:, model.rc]
    code = tied.astype(np.int64) @ (1 << np.arange(nr, dtype=np.int64))
    code = code * (1 << model.K) + strict.astype(np.int64) @ (1 << np.arange(model.K, dtype=np.int64))
    D = np.stack([model.deviation_value(S, e) for e in range(model.n)], axis=1)
    margin = S - model.slope[None, :]
    ok = np.zeros(npts, dtype=bool)
    for c in np.unique(code):
        sel = np.nonzero(code == c)[0]
        t_row = tied[sel[0]]
        st_row = strict[sel[0]]
        vars_ = [r for r in range(nr) if t_row[r]]
        v = len(vars_)
        if v > max_vars:
            for i in sel:
                ok[i] = _feasible_flow(model, S[i], tol_t) is not None
            continue
        m = sel.size
        eq_A, ineq_A, ineq_b, eq_b = [], [], [], []
        for k in range(model.K):
            mine = [1.0 if model.rc[r] == k else 0.0 for r in vars_]
            if not any(mine):
                continue
            if st_row[k]:
                eq_A.append(np.tile(mine, (m, 1)))
                eq_b.append(np.full(m, model.pop[k]))
            else:
                ineq_A.append(np.tile(mine, (m, 1)))
                ineq_b.append(np.full(m, model.pop[k]))
        for j in range(v):
            row = np.zeros(v)
            row[j] = -1.0
            ineq_A.append(np.tile(row, (m, 1)))
            ineq_b.append(np.zeros(m))
        inc = model.incidence[vars_].T  # items x vars
        for e in range(model.n):
            ineq_A.append(-margin[sel, e][:, None] * inc[e][None, :])
            ineq_b.append(-(D[sel, e] - tol_t))
        if v == 0:
            feas = np.ones(m, dtype=bool)
            for b in ineq_b:
                feas &= b >= -1e-9
            ok[sel] = feas
            continue
        A_all = np.stack(ineq_A, axis=1)  # m x rows x v
        b_all = np.stack(ineq_b, axis=1)
        E = np.stack(eq_A, axis=1) if eq_A else np.zeros((m, 0, v))
        e_b = np.stack(eq_b, axis=1) if eq_b else np.zeros((m, 0))
        need = v - E.shape[1]
        feas = np.zeros(m, dtype=bool)
        scale = 1e-9 * np.maximum(1.0, np.abs(b_all)) + 1e-9
        for combo in combinations(range(A_all.shape[1]), need):
            M = np.concatenate([E, A_all[:, list(combo), :]], axis=1)
            rhs = np.concatenate([e_b, b_all[:, list(combo)]], axis=1)
            det = np.linalg.det(M)
            good = np.abs(det) > 1e-12
            if not good.any():
                continue
            M = np.where(good[:, None, None], M, np.eye(v)[None, :, :])
            y = np.linalg.solve(M, rhs[:, :, None])[:, :, 0]
            lhs = np.einsum("mrv,mv->mr", A_all, y)
            within = np.all(lhs <= b_all + scale, axis=1)
            if E.shape[1]:
                within &= np.all(np.abs(np.einsum("mrv,mv->mr", E, y) - e_b) <= 1e-9 * np.maximum(1.0, np.abs(e_b)), axis=1)
            feas |= good & within
        ok[sel] = feas
    return ok


def _feasible_flow(model: _GridModel, row: np.ndarray, tol_t: float) -> FlowSolution | None:
    """A buyer best-response flow under which no seller's threshold deviation pays, if any.

    Among feasible flows the LP picks one with the most room in the seller
    constraints, so the tolerance is only spent when nothing else works.
    """
    inst = model.inst
    P = row[None, :]
    prices = (P @ model.incidence.T)[0]
    vars_, eq_rows, eq_rhs, ub_rows, ub_rhs = [], [], [], [], []
    groups = []
    for k in range(model.K):
        mine = [r for r in range(len(model.routes)) if model.rc[r] == k]
        cheapest = min(prices[r] for r in mine)
        if cheapest > model.value[k] + 1e-9:
            continue
        tied = [r for r in mine if abs(prices[r] - cheapest) <= 1e-9 * max(1.0, abs(prices[r]))]
        groups.append((k, len(vars_), len(vars_) + len(tied), cheapest < model.value[k] - 1e-9))
        vars_ += [(k, r) for r in tied]
    n = len(vars_)
    for k, a, b, strict in groups:
        row_k = [1.0 if a <= j < b else 0.0 for j in range(n)] + [0.0]
        (eq_rows if strict else ub_rows).append(row_k)
        (eq_rhs if strict else ub_rhs).append(model.pop[k])
    for e in range(model.n):
        D = float(model.deviation_value(P, e)[0])
        margin = row[e] - model.slope[e]
        # margin * x_e >= D - tol + room
        ub_rows.append([-margin * model.incidence[r, e] for _, r in vars_] + [1.0])
        ub_rhs.append(tol_t - D)
    res = linprog(np.r_[np.zeros(n), -1.0], A_ub=np.array(ub_rows), b_ub=ub_rhs,
                  A_eq=np.array(eq_rows) if eq_rows else None, b_eq=eq_rhs or None,
                  bounds=[(0, None)] * n + [(0.0, tol_t)], method="highs")
    if res.status != 0:
        return None
    paths = [PathFlow(model.routes[r].items, float(v), k) for (k, r), v in zip(vars_, res.x[:n]) if v > 1e-12]
    mags = [0.0] * model.K
    for p in paths:
        mags[p.commodity] += p.amount
    return flow_from_paths(inst, paths, mags)
