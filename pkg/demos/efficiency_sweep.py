"""Efficiency loss grows with the number of monopolies on a path.

Prints the concave and MHR tight families next to their bounds, then the
constant-elasticity example whose loss diverges as the elasticity nears 2.
"""

import sys
import warnings

from netprice import scenarios
from netprice.efficiency import efficiency_ratio, sweep, write_csv
from netprice.equilibrium import find_equilibrium

write_csv(sweep("concave-tight", range(1, 7)), sys.stdout)
print()
write_csv(sweep("mhr-tight", range(1, 7)), sys.stdout)
print()

warnings.simplefilter("ignore")
for r in (2.5, 2.2, 2.05, 2.01):
    inst = scenarios.build("unbounded", {"r": r})
    print(f"unbounded r = {r}: eta = {efficiency_ratio(inst, find_equilibrium(inst)).eta:.3f}")
