"""Numerical stability evidence on the grid.

1. a drift certificate for max-pressure (eps, k with
   |f|^2 - |x|^2 <= -eps |x|_1 + k on sampled states),
2. the Lyapunov sandwich around the MPC cost, and
3. behavioral boundedness probes under max-pressure at a feasible and an
   infeasible demand (the MPC version of this probe lives in the
   acceptance tests; max-pressure keeps the demo fast).
"""

import numpy as np

from trafficmpc.analysis import (boundedness_probe, fit_drift_certificate,
                                 lyapunov_bounds_check, make_controller,
                                 sample_states)
from trafficmpc.controllers import max_pressure
from trafficmpc.network import make_paper_grid

net = make_paper_grid()
lam = np.full(8, 0.93)

pol = lambda x, t: max_pressure(net, x)
samples = sample_states(net, lam, pol, 1000, rng=0)
cert = fit_drift_certificate(net, lam, pol, samples)
print(f"drift certificate: eps = {cert.eps:.4f}, k = {cert.k:.1f}, "
      f"valid = {cert.valid} on {cert.n_samples} samples")

rng = np.random.default_rng(1)
pairs = [(rng.uniform(0, 15, net.n_x),
          np.concatenate([rng.dirichlet(np.ones(4)) for _ in range(4)]))
         for _ in range(500)]
v = lyapunov_bounds_check(net, lam, 0.1, pairs)
print(f"Lyapunov sandwich max violation: {v:.2e} (nonpositive = holds)")

for demand in (0.93, 2.0):
    verdict = boundedness_probe(net, demand,
                                make_controller(net, "max-pressure"),
                                horizon=10000, x0=1.0)
    print(f"demand {demand}: bounded={verdict['bounded']} "
          f"growing={verdict['growing']} "
          f"final |x|_inf = {verdict['final_norm_inf']:.2f}")
