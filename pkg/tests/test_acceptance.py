"""Acceptance gate: one test per headline claim, each printing its verdict.

Run with -v to see one PASSED/FAILED line per criterion; the print lines
carry the measured numbers (visible with -s or on failure).
"""

import time

import numpy as np
import pytest

from conftest import make_split_node, make_two_node
from trafficmpc.analysis import (boundedness_probe, compare_policies,
                                 fit_drift_certificate, lyapunov_bounds_check,
                                 make_controller, sample_states)
from trafficmpc.bounds import bounds_from_truth
from trafficmpc.cli import preset_config
from trafficmpc.controllers import (grid_oracle, lyapunov_objective,
                                    max_pressure, mpc_objective, one_step_mpc,
                                    simplex_grid)
from trafficmpc.dynamics import (QueueState, augmented_step_lower,
                                 augmented_step_upper, demand_vector, step)
from trafficmpc.flow import check_demand_feasible, solve_flow
from trafficmpc.identification import run_identification
from trafficmpc.network import Link, Network, make_paper_grid


def _report(n, ok, detail):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {n}: {detail}"


def _random_chain(rng):
    """entry -> internal -> exit with random rates; two nodes, two phases
    per node, so a full 0.01-resolution product grid stays small."""
    c = rng.uniform(1.0, 3.0, 2)
    links = [Link("e", "entry", end="n1"),
             Link("i", "internal", start="n1", end="n2"),
             Link("x", "exit", start="n2")]
    movements = [("e", "i"), ("i", "x")]
    C = {("e", "i"): float(c[0]), ("i", "x"): float(c[1])}
    R = {("e", "i"): 1.0, ("i", "x"): 1.0}
    phases = {"n1": [[("e", "i")], []], "n2": [[("i", "x")], []]}
    return Network(links, movements, C, R, phases)


def _full_grid(net, resolution):
    """Product of per-node simplex grids at a shared resolution."""
    parts = [simplex_grid(net.node_slice[n].stop - net.node_slice[n].start,
                          resolution) for n in net.nodes]
    out = parts[0]
    for p in parts[1:]:
        out = np.hstack([np.repeat(out, len(p), axis=0),
                         np.tile(p, (len(out), 1))])
    return out


def test_criterion_1_exact_recovery():
    # unknown C and internal R on the four-intersection grid, starting from
    # truth +/- 0.1 intervals: exact to 1e-9 within 500 steps and 60 s
    net = make_paper_grid()
    lam = np.full(8, 0.93)
    b0 = bounds_from_truth(net, lam, delta=0.1)
    t0 = time.time()
    res = run_identification(net, b0, 1.0, lam, max_steps=500)
    wall = time.time() - t0
    mask = net.internal_mask
    err = max(np.abs(res.bounds.c_hi - net.C).max(),
              np.abs(res.bounds.c_lo - net.C).max(),
              np.abs(res.bounds.r_hi[mask] - net.R[mask]).max(),
              np.abs(res.bounds.r_lo[mask] - net.R[mask]).max())
    ok = res.converged and err <= 1e-9 and res.steps <= 500 and wall <= 60.0
    _report(1, ok, f"converged={res.converged} err={err:.3g} "
                   f"steps={res.steps} wall={wall:.1f}s")


def test_criterion_2_boundedness_probe():
    # closed loop under the one-step MPC over 10000 steps: bounded at the
    # feasible demand, growing at the infeasible one
    net = make_paper_grid()
    cheap = dict(grid_resolution=0.05, restarts=0, max_sweeps=1,
                 refine_tol=1e-4, seed=0)
    low = boundedness_probe(net, 0.93, make_controller(net, "one-step-mpc",
                                                       **cheap),
                            horizon=10000, x0=1.0)
    high = boundedness_probe(net, 2.0, make_controller(net, "one-step-mpc",
                                                       **cheap),
                             horizon=10000, x0=1.0)
    ok = low["bounded"] and not low["growing"] \
        and high["growing"] and not high["bounded"]
    _report(2, ok, f"0.93: max|x| {low['final_norm_inf']:.3g} bounded="
                   f"{low['bounded']}; 2.0: slope {high['tail_slope']:.3g} "
                   f"growing={high['growing']}")


def test_criterion_3_mpc_beats_baselines():
    # time-averaged squared 2-norm over steps 0..300 from unit queues: the
    # MPC strictly under max-pressure and proportional-fair, three seeds
    net = make_paper_grid()
    lam = np.full(8, 0.93)
    ok = True
    details = []
    for seed in (0, 1, 2):
        ctrls = {"mpc": make_controller(net, "one-step-mpc", seed=seed),
                 "mp": make_controller(net, "max-pressure"),
                 "pf": make_controller(net, "prop-fair")}
        res = compare_policies(net, lam, 1.0, ctrls, 300)
        avg = {k: float(np.mean(v["norm2_sq"])) for k, v in res.items()}
        ok = ok and avg["mpc"] < avg["mp"] and avg["mpc"] < avg["pf"]
        details.append(f"seed {seed}: mpc {avg['mpc']:.2f} "
                       f"mp {avg['mp']:.2f} pf {avg['pf']:.2f}")
    _report(3, ok, "; ".join(details))


def test_criterion_4_objectives_equivalent():
    # demand-free cost and Lyapunov cost share every argmin on a common
    # 0.01 grid and differ by a u-independent constant, 50 random instances
    rng = np.random.default_rng(40)
    ok = True
    worst_ptp, mismatches = 0.0, 0
    for trial in range(50):
        net = make_split_node(c=tuple(rng.uniform(1, 3, 2)),
                              r=tuple(rng.dirichlet((2, 2)))) \
            if trial % 2 else _random_chain(rng)
        lam = rng.uniform(0.1, 1.0, len(net.entry_links))
        x = rng.uniform(0, 6, net.n_x)
        eps = float(rng.uniform(0.01, 0.5))
        U = _full_grid(net, 0.01)
        J = mpc_objective(net, x, U)
        L = np.array([lyapunov_objective(net, x, u, lam, eps) for u in U])
        worst_ptp = max(worst_ptp, float(np.ptp(L - J)))
        # every grid argmin of one cost must also minimize the other
        jmin, lmin = J.min(), L.min()
        same = np.array_equal(np.nonzero(J == jmin)[0],
                              np.nonzero(L == lmin)[0])
        tied = (np.abs(J[np.argmin(L)] - jmin) <= 1e-9
                and np.abs(L[np.argmin(J)] - lmin) <= 1e-9)
        if not (same or tied):
            mismatches += 1
    ok = mismatches == 0 and worst_ptp <= 1e-9
    _report(4, ok, f"argmin mismatches {mismatches}/50, "
                   f"max ptp of difference {worst_ptp:.3g}")


def test_criterion_5_lyapunov_sandwich():
    # the Lyapunov cost brackets eps*|x|_1 + |f|^2 within the entry constant
    # on 1000 random state/control pairs of the grid
    net = make_paper_grid()
    lam = np.full(8, 0.93)
    rng = np.random.default_rng(50)
    samples = []
    for _ in range(1000):
        x = rng.uniform(0, 15, net.n_x)
        u = np.concatenate([rng.dirichlet(np.ones(4)) for _ in range(4)])
        samples.append((x, u))
    v = lyapunov_bounds_check(net, lam, 0.1, samples)
    _report(5, v <= 1e-9, f"max sandwich violation {v:.3g} over 1000 samples")


def test_criterion_6_drift_certificate():
    # a positive-eps, finite-k drift certificate for max-pressure at the
    # feasible demand, with no violations on the 2000 training samples
    net = make_paper_grid()
    lam = np.full(8, 0.93)
    pol = lambda x, t: max_pressure(net, x)
    samples = sample_states(net, lam, pol, 2000, rng=0)
    cert = fit_drift_certificate(net, lam, pol, samples)
    ok = cert.valid and cert.eps > 0 and np.isfinite(cert.k) \
        and cert.max_violation <= 0 and cert.n_samples == 2000
    _report(6, ok, f"eps={cert.eps:.4g} k={cert.k:.4g} "
                   f"max_violation={cert.max_violation:.3g}")


def test_criterion_7_augmented_sandwich():
    # lower and upper bounding recursions bracket the true queues at every
    # step, 100 seeds x 200 steps, counted strictly
    net = make_paper_grid()
    lam = np.full(8, 0.93)
    b = bounds_from_truth(net, lam, delta=0.1)
    violations = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        lo = up = true = QueueState.initial(net, rng.uniform(0, 4, net.n_x))
        for _ in range(200):
            u = np.concatenate([rng.dirichlet(np.ones(4)) for _ in range(4)])
            true = step(net, true, u, lam)
            up = augmented_step_upper(net, b, up, u)
            lo = augmented_step_lower(net, b, lo, u)
            violations += int((lo.x > true.x).sum() + (true.x > up.x).sum())
    _report(7, violations == 0,
            f"{violations} elementwise violations over 100x200 steps")


def test_criterion_8_solver_matches_oracle():
    # block-coordinate solver within 1e-6 relative of the exhaustive grid
    # oracle on 50 random instances with at most two intersections
    rng = np.random.default_rng(80)
    worst = 0.0
    for trial in range(50):
        if trial % 2:
            net = make_two_node(rng.integers(1 << 30))
        else:
            net = make_split_node(c=tuple(rng.uniform(1, 3, 2)),
                                  r=tuple(rng.dirichlet((2, 2))))
        x = rng.uniform(0, 8, net.n_x)
        sol = one_step_mpc(net, x, rng=trial)
        ora = grid_oracle(net, x)
        gap = (sol.objective - ora.objective) / max(abs(ora.objective), 1.0)
        worst = max(worst, gap)
    _report(8, worst <= 1e-6, f"worst relative gap {worst:.3g} over 50")


def test_criterion_9_flow_and_feasibility():
    # steady flows satisfy conservation to 1e-10 on every preset scenario;
    # the feasibility verdict agrees in sign with a brute-force grid search
    residual = 0.0
    for name in ("grid", "fig3", "fig4"):
        cfg = preset_config(name)
        net = make_paper_grid()
        lam = demand_vector(net, cfg.demand)
        q = solve_flow(net, lam).q
        T = np.zeros((net.n_links, net.n_links))
        mv = np.arange(net.n_x)
        np.add.at(T, (net.to_link[mv], net.from_link[mv]), net.R[mv])
        b = np.zeros(net.n_links)
        b[net.entry_link_idx] = lam
        T[net.entry_link_idx, :] = 0.0
        residual = max(residual, float(np.abs(q - (b + T @ q)).max()))

    def brute_force(net, lam, resolution=0.01):
        """Best grid margin and the grid's quantization error bound.  The
        margin is Lipschitz in each node's control, so the grid can only
        misjudge the sign when the true margin is below the bound."""
        q = solve_flow(net, lam).q
        worst, bound = np.inf, 0.0
        for ni, node in enumerate(net.nodes):
            sl = net.node_slice[node]
            mvs = np.nonzero(net.ctrl_node == ni)[0]
            if mvs.size == 0:
                continue
            pts = simplex_grid(sl.stop - sl.start, resolution)
            S = pts @ net.P[sl][:, mvs]
            m = net.C[mvs] * S - q[net.from_link[mvs]] * net.R[mvs]
            worst = min(worst, m.min(axis=1).max())
            lip = (net.C[mvs] * net.P[sl][:, mvs].sum(axis=0)).max()
            bound = max(bound, resolution * float(lip))
        return worst, bound

    rng = np.random.default_rng(90)
    decisive = disagreements = 0
    for _ in range(50):
        net = make_two_node(rng.integers(1 << 30))
        lam = rng.uniform(0.05, 1.6, 2)
        cert = check_demand_feasible(net, lam)
        margin, band = brute_force(net, lam)
        if abs(cert.margin) <= band:
            continue  # below grid resolution, the oracle cannot see the sign
        decisive += 1
        if cert.feasible != (margin > 1e-9):
            disagreements += 1
    ok = residual <= 1e-10 and disagreements == 0 and decisive >= 40
    _report(9, ok, f"max conservation residual {residual:.3g}; "
                   f"{disagreements} disagreements on {decisive}/50 "
                   f"decisive demands")
