"""Bundle markets: a shared item captures the markup.

Two bundles {m, a} and {m, b} with free items: m is in every consumed
bundle, so it prices like a monopoly while a and b compete down to zero.
"""

from netprice import costs as C
from netprice import demand as D
from netprice.bundles import bundle_equilibrium
from netprice.market import BUNDLE, Commodity, Edge, MarketInstance
from netprice.verify import check_all

items = [Edge(k, None, None, C.zero()) for k in ("m", "a", "b")]
market = MarketInstance([], items, [Commodity(None, None, D.affine(1, 1))], BUNDLE, [["m", "a"], ["m", "b"]])
eq = bundle_equilibrium(market)
print(f"x = {eq.magnitude:.4f}, prices = { {k: round(v, 4) for k, v in eq.prices.items()} }")
print("virtual monopolies:", eq.monopolies)
print("verified:", check_all(market, eq.prices, eq.flow).passed)
