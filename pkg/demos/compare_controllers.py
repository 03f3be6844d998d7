"""Side-by-side closed-loop comparison of four controllers on the grid.

One-step MPC vs max-pressure vs proportional-fair vs fixed-time cycling,
all from unit queues at demand 0.93 over 300 steps.
"""

import numpy as np

from trafficmpc.analysis import compare_policies, make_controller
from trafficmpc.network import make_paper_grid

net = make_paper_grid()
lam = np.full(8, 0.93)

controllers = {
    "one-step-mpc": make_controller(net, "one-step-mpc", seed=0),
    "max-pressure": make_controller(net, "max-pressure"),
    "prop-fair": make_controller(net, "prop-fair"),
    "fixed-time": make_controller(net, "fixed-time"),
}
results = compare_policies(net, lam, 1.0, controllers, 300)

print(f"{'controller':<16}{'avg |x|^2':>12}{'peak |x|^2':>12}{'final':>12}")
for name, r in results.items():
    series = r["norm2_sq"]
    print(f"{name:<16}{series.mean():>12.2f}{series.max():>12.2f}"
          f"{series[-1]:>12.2f}")

avg = {k: float(r["norm2_sq"].mean()) for k, r in results.items()}
assert avg["one-step-mpc"] < min(avg["max-pressure"], avg["prop-fair"])
print("\nthe MPC keeps the smallest time-averaged squared queue norm")
