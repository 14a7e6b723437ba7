"""One seller, cost x^2, buyers with value 1 - x.

Solves the monopoly price, then shows why the competitive price is not
stable: the verifier finds the seller's profitable deviation.
"""

from netprice import scenarios
from netprice.equilibrium import find_equilibrium
from netprice.flow import min_cost_flow, optimal_magnitude
from netprice.verify import check_all

inst = scenarios.build("single-good")
eq = find_equilibrium(inst)
print(f"equilibrium: x = {eq.magnitude:.4f}, price = {eq.prices['e1']:.4f}, profit = {eq.profit(inst, 'e1'):.4f}")

x_star, _ = optimal_magnitude(inst)
competitive = {"e1": 2 * x_star}
report = check_all(inst, competitive, min_cost_flow(inst, x_star))
w = report.checks["seller_stability"].witness
print(f"competitive price {competitive['e1']:.4f} at x* = {x_star:.4f}: passed = {report.passed}")
print(f"  seller deviates to {w['price']:.4f} and earns {w['profit']:.4f} instead of {w['old_profit']:.4f}")
