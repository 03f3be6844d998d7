"""Steady flows and the demand feasibility boundary of the grid.

Solves the conservation system for the link flows, then sweeps the uniform
demand level to locate where the per-node service LP loses its positive
margin.
"""

import numpy as np

from trafficmpc.flow import check_demand_feasible, solve_flow
from trafficmpc.network import make_paper_grid

net = make_paper_grid()

lam = np.full(8, 0.93)
q = solve_flow(net, lam)
print("steady flows at demand 0.93:")
for lid in net.internal_links:
    print(f"  link {lid}: {q.of(net, lid):.6f}")

print("\nfeasibility sweep:")
for level in (0.5, 0.8, 0.9, 0.93, 0.94, 1.0, 2.0):
    cert = check_demand_feasible(net, np.full(8, level))
    tag = "feasible" if cert.feasible else "infeasible"
    print(f"  demand {level:4.2f}: {tag:>10}  margin {cert.margin:+.6f}")

# bisect the boundary
lo, hi = 0.5, 2.0
for _ in range(40):
    mid = 0.5 * (lo + hi)
    if check_demand_feasible(net, np.full(8, mid)).feasible:
        lo = mid
    else:
        hi = mid
print(f"\nuniform demand boundary near {0.5 * (lo + hi):.6f}")
