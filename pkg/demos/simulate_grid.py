"""Closed-loop simulation on the four-intersection grid.

Runs the one-step MPC from unit queues at demand 0.93, prints the norm
trajectory every 25 steps, and checks that the interval bounding dynamics
really bracket the true queues along the way.
"""

import numpy as np

from trafficmpc.analysis import compute_metrics, make_controller, run_closed_loop
from trafficmpc.bounds import bounds_from_truth
from trafficmpc.dynamics import (QueueState, augmented_step_lower,
                                 augmented_step_upper, step)
from trafficmpc.network import make_paper_grid

net = make_paper_grid()
lam = np.full(8, 0.93)
print(f"grid: {net.n_links} links, {net.n_x} movements, {net.n_u} phases")

policy = make_controller(net, "one-step-mpc", seed=0)
log = run_closed_loop(net, policy, 1.0, lam, 200)
m = compute_metrics(log)
for t in range(0, 201, 25):
    print(f"  t={t:4d}  |x|^2 = {m['norm2_sq'][t]:8.3f}   "
          f"|x|_inf = {m['norm_inf'][t]:6.3f}")
print(f"throughput after 200 steps: {m['throughput'][-1]:.2f} "
      f"(demand in: {200 * lam.sum():.2f})")

# interval dynamics: run the same controls through the bounding recursions
b = bounds_from_truth(net, lam, delta=0.1)
lo = up = true = QueueState.initial(net, 1.0)
width = []
for t in range(200):
    u = log.u[t]
    true = step(net, true, u, lam)
    up = augmented_step_upper(net, b, up, u)
    lo = augmented_step_lower(net, b, lo, u)
    assert np.all(lo.x <= true.x) and np.all(true.x <= up.x)
    width.append((up.x - lo.x).max())
print(f"sandwich held for 200 steps; max interval width {max(width):.3f}")
