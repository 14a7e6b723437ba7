"""Two sources sharing a network without monopolies.

The welfare-optimal flow cannot be supported by marginal-cost prices, and
a price-grid search on the three-edge example finds no equilibrium at all.
"""

from netprice import scenarios
from netprice.equilibrium import multi_source_equilibrium
from netprice.errors import InapplicableError
from netprice.flow import welfare_optimum
from netprice.verify import check_all, grid_search_equilibria

inst = scenarios.build("two-source-inefficient")
flow = welfare_optimum(inst)
prices = {e.id: e.cost.marginal(flow.edge_flow[e.id], "right") for e in inst.edges}
report = check_all(inst, prices, flow)
print("optimal flow:", {k: round(v, 4) for k, v in flow.edge_flow.items()})
print("marginal prices stable:", report.passed)
print("deviation:", report.checks["seller_stability"].witness)
try:
    multi_source_equilibrium(inst)
except InapplicableError as exc:
    print("construction:", exc)

res = grid_search_equilibria(scenarios.build("no-equilibrium"), step=0.05)
print(f"grid search: {res.points} price points, {res.screened} screened, {len(res.equilibria)} equilibria")
