"""Signal controllers: demand-free one-step MPC and queueing baselines.

The one-step MPC minimizes a surrogate of the next-step squared queue norm
that needs no demand information.  It is nonconvex piecewise-quadratic in the
control, so it is solved by block-coordinate descent over intersections
(dense simplex grid scan plus pattern refinement per node) with random
restarts.  The max-pressure control is always included among the candidates,
so the closed loop never does worse than max-pressure on the surrogate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import demand_vector
from .network import Network, NetworkError


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def mpc_objective(net: Network, x, U) -> np.ndarray:
    """One-step MPC cost for a batch of controls U (B, n_u).

    Entry movements contribute C^2 S^2(u) - 2 C S(u) x; internal movements
    contribute the square of their predicted next queue length.
    """
    x = np.asarray(x, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    S = net.signal_batch(U)  # (B, n_x)
    CS = net.C * S
    entry = ((CS - 2.0 * x) * CS)[:, net.entry_mask].sum(axis=1)
    out = np.maximum(x - CS, 0.0)
    served = np.minimum(CS, x)
    arrivals = served @ net._arrival.T  # (B, n_links)
    nxt = out + net.R * arrivals[:, net.from_link]
    internal = (nxt[:, net.internal_mask] ** 2).sum(axis=1)
    return entry + internal


def lyapunov_objective(net: Network, x, u, lam, eps: float) -> float:
    """Objective that differs from the one-step MPC cost by a constant in u
    and sandwiches the next-step squared 2-norm of the queue vector."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    lam = demand_vector(net, lam)
    lam_mv = lam[np.maximum(net.entry_pos_of_movement, 0)]
    ent = net.entry_mask
    const = (eps * np.abs(x).sum() + lam @ lam
             + (x[ent] ** 2 + 2.0 * net.R[ent] * lam_mv[ent] * x[ent]).sum())
    return float(const + mpc_objective(net, x, u)[0])


# ---------------------------------------------------------------------------
# simplex grids and pattern refinement
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length `parts` summing to `total`."""
    if parts == 1:
        return np.array([[total]])
    rows = []
    for first in range(total + 1):
        rest = _compositions(total - first, parts - 1)
        rows.append(np.hstack([np.full((len(rest), 1), first), rest]))
    return np.vstack(rows)


def simplex_grid(k: int, resolution: float) -> np.ndarray:
    """Lattice covering the (k-1)-simplex at the given resolution."""
    steps = max(1, round(1.0 / resolution))
    return _compositions(steps, k) / steps


@lru_cache(maxsize=None)
def _sum_zero_dirs(k: int, radius: int = 1) -> np.ndarray:
    """Integer direction vectors tangent to the simplex (components sum to
    zero), excluding the origin."""
    dirs = [d for d in itertools.product(range(-radius, radius + 1), repeat=k)
            if sum(d) == 0 and any(d)]
    return np.array(dirs, dtype=float)


def _joint_dirs(sizes: Sequence[int]) -> np.ndarray:
    """Tangent directions for a product of simplexes: the product of the
    per-block direction sets (each augmented with the zero move)."""
    blocks = []
    for k in sizes:
        d = _sum_zero_dirs(k)
        blocks.append(np.vstack([np.zeros((1, k)), d]))
    joint = blocks[0]
    for b in blocks[1:]:
        joint = np.hstack([np.repeat(joint, len(b), axis=0),
                           np.tile(b, (len(joint), 1))])
    return joint[np.any(joint != 0.0, axis=1)]


def _pattern_refine(f_batch, p, dirs, res0, min_res=1e-9, max_iter=500):
    """Shrinking pattern search on a product of simplexes.

    f_batch maps an (B, dim) array of points to (B,) objective values.
    Candidate moves are p + res * dirs, filtered to the nonnegative orthant.
    """
    p = np.asarray(p, dtype=float).copy()
    best = float(f_batch(p[None])[0])
    res = res0
    shrink = 0.35
    it = 0
    while res > min_res and it < max_iter:
        # probe three resolutions per call; small batches are overhead-bound
        scales = res * shrink ** np.arange(3)
        cand = (p[None, None] + scales[:, None, None] * dirs[None]).reshape(
            -1, len(p))
        ok = np.all(cand >= -1e-15, axis=1)
        cand = np.maximum(cand[ok], 0.0)
        if len(cand):
            vals = f_batch(cand)
            k = int(np.argmin(vals))
            if vals[k] < best - 1e-15:
                best = float(vals[k])
                p = cand[k]
                res = scales[np.nonzero(ok)[0][k] // len(dirs)]
                it += 1
                continue
        res *= shrink ** 3
        it += 1
    return p, best


# ---------------------------------------------------------------------------
# one-step MPC
# ---------------------------------------------------------------------------

@dataclass
class OneStepSolution:
    u: np.ndarray
    objective: float
    stats: dict = field(default_factory=dict)


def _make_block_eval(net: Network, x, u, node_idx: int, sl) -> Callable:
    """Evaluator for one node's phase block with every other block frozen.

    Returns f such that f(blocks) equals mpc_objective on u with u[sl]
    replaced row by row, but touching only the movements whose service or
    upstream arrivals depend on this node.  Used by the block-coordinate
    sweeps, where full-network evaluation dominates the runtime.
    """
    mv_n = np.nonzero(net.ctrl_node == node_idx)[0]
    S_full = net.signal(u)
    CS_full = net.C * S_full
    served = np.minimum(CS_full, x)
    served[mv_n] = 0.0
    arr_fix = net._arrival @ served  # arrivals from frozen movements, per link

    pos_e = np.nonzero(net.entry_mask[mv_n])[0]
    ent_n = mv_n[pos_e]
    pos_i = np.nonzero(net.internal_mask[mv_n])[0]
    int_n = mv_n[pos_i]
    # internal movements fed by a link this node discharges into, but
    # controlled elsewhere: their inflow varies with the block
    fed = np.unique(net.to_link[mv_n])
    oth = (net.internal_mask & np.isin(net.from_link, fed)
           & (net.ctrl_node != node_idx))
    int_o = np.nonzero(oth)[0]
    out_o = np.maximum(x[int_o] - CS_full[int_o], 0.0)

    # arrivals are needed at the upstream link of every affected movement
    need = np.unique(np.concatenate([net.from_link[int_n],
                                     net.from_link[int_o]])).astype(int)
    A_sub = net._arrival[need][:, mv_n]  # (n_need, |mv_n|)
    link_col = np.full(net.n_links, -1, dtype=int)
    link_col[need] = np.arange(len(need))

    P_n = net.P[sl][:, mv_n]
    c_n, x_n, r_n = net.C[mv_n], x[mv_n], net.R[int_n]
    x_e2, x_i = 2.0 * x[ent_n], x[int_n]
    col_n = link_col[net.from_link[int_n]]
    col_o = link_col[net.from_link[int_o]]
    arr_fix_aff = arr_fix[need]
    r_o = net.R[int_o]

    # cost of the movements untouched by this node, evaluated once
    rest = float(mpc_objective(net, x, u)[0])

    def local(blocks):
        CSn = (blocks @ P_n) * c_n  # (B, |mv_n|)
        arr = arr_fix_aff + np.minimum(CSn, x_n) @ A_sub.T
        cse = CSn[:, pos_e]
        total = ((cse - x_e2) * cse).sum(axis=1)
        nxt_n = np.maximum(x_i - CSn[:, pos_i], 0.0) + r_n * arr[:, col_n]
        total += (nxt_n ** 2).sum(axis=1)
        if int_o.size:
            nxt_o = out_o + r_o * arr[:, col_o]
            total += (nxt_o ** 2).sum(axis=1)
        return total

    const = rest - float(local(u[sl][None])[0])

    def f(blocks):
        return const + local(np.atleast_2d(blocks))

    return f


def _node_grid(k: int, resolution: float, cap: int) -> np.ndarray:
    res = resolution
    grid = simplex_grid(k, res)
    while len(grid) > cap:
        res *= 2.0
        grid = simplex_grid(k, res)
    return grid


def one_step_mpc(net: Network, x, *, grid_resolution: float = 0.01,
                 restarts: int = 5, max_sweeps: int = 12,
                 node_grid_cap: int = 30000, refine: bool = True,
                 refine_tol: float = 1e-9, rng=None,
                 warm_start=None) -> OneStepSolution:
    """Minimize the one-step MPC cost over the product of node simplexes.

    Block-coordinate descent: per node, a dense simplex grid scan followed by
    pattern refinement, swept until no node improves.  Starting points are
    the uniform control, the max-pressure control, an optional warm start,
    and `restarts` random points.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise NetworkError("queue lengths must be nonnegative")
    rng = np.random.default_rng(rng)

    mp = max_pressure(net, x)
    starts = []
    if warm_start is not None:
        starts.append(np.asarray(warm_start, dtype=float).copy())
        if restarts > 0:
            starts.extend([mp, net.uniform_control()])
    else:
        starts.extend([mp, net.uniform_control()])
    for _ in range(restarts):
        u = np.zeros(net.n_u)
        for node in net.nodes:
            sl = net.node_slice[node]
            u[sl] = rng.dirichlet(np.ones(sl.stop - sl.start))
        starts.append(u)

    # the raw max-pressure vertex always competes, so the returned control is
    # never worse than max-pressure on this cost
    best_u, best_val = mp, float(mpc_objective(net, x, mp)[0])
    sweeps_done = 0
    for u0 in starts:
        u = u0.copy()
        val = float(mpc_objective(net, x, u)[0])
        for _ in range(max_sweeps):
            improved = False
            for node_idx, node in enumerate(net.nodes):
                sl = net.node_slice[node]
                k = sl.stop - sl.start
                if k == 1:
                    continue
                f_block = _make_block_eval(net, x, u, node_idx, sl)
                grid = _node_grid(k, grid_resolution, node_grid_cap)
                vals = f_block(grid)
                j = int(np.argmin(vals))
                cand, cand_val = grid[j], float(vals[j])
                if refine:
                    start = cand if cand_val < val else u[sl].copy()
                    cand, cand_val = _pattern_refine(
                        f_block, start, _sum_zero_dirs(k),
                        res0=max(grid_resolution, 0.02), min_res=refine_tol)
                if cand_val < val - 1e-13:
                    u[sl] = cand
                    val = cand_val
                    improved = True
            sweeps_done += 1
            if not improved:
                break
        if val < best_val:
            best_val, best_u = val, u
    best_u = net.check_control(best_u)
    best_val = float(mpc_objective(net, x, best_u)[0])
    return OneStepSolution(best_u, best_val,
                           {"sweeps": sweeps_done, "starts": len(starts),
                            "oracle_verified": False})


def grid_oracle(net: Network, x, *, resolution: float = 0.01,
                refine: bool = True, max_points: int = 4_000_000) -> OneStepSolution:
    """Exhaustive product-grid minimizer of the one-step MPC cost.

    Independent of the block-coordinate path: scans the full product of node
    simplex grids (coarsening if the product would exceed max_points), then
    refines the incumbent with a joint pattern search.  Intended for
    instances with one or two intersections.
    """
    x = np.asarray(x, dtype=float)
    sizes = [net.node_slice[n].stop - net.node_slice[n].start
             for n in net.nodes]
    res = resolution
    while True:
        grids = [simplex_grid(k, res) for k in sizes]
        total = int(np.prod([len(g) for g in grids]))
        if total <= max_points:
            break
        res *= 2.0

    # cartesian product of per-node grids, evaluated in chunks
    idx = np.indices([len(g) for g in grids]).reshape(len(grids), -1).T
    best_val, best_u = np.inf, None
    chunk = 200_000
    for lo in range(0, len(idx), chunk):
        sel = idx[lo:lo + chunk]
        U = np.hstack([grids[g][sel[:, g]] for g in range(len(grids))])
        vals = mpc_objective(net, x, U)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best_u = float(vals[j]), U[j].copy()
    if refine:
        dirs = _joint_dirs(sizes)
        best_u, best_val = _pattern_refine(
            lambda U: mpc_objective(net, x, U), best_u, dirs, res0=res)
    return OneStepSolution(net.check_control(best_u), best_val,
                           {"grid_points": total, "resolution": res})


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def max_pressure(net: Network, x) -> np.ndarray:
    """Vertex control maximizing service-weighted upstream-minus-downstream
    queue differences at each intersection; ties go to the lowest phase."""
    x = np.asarray(x, dtype=float)
    # downstream term: for movement (i,j), sum_l R_jl x_jl over movements
    # leaving link j (zero when j is an exit link)
    per_link = np.zeros(net.n_links)
    np.add.at(per_link, net.from_link, net.R * x)
    pressure = net.C * (x - per_link[net.to_link])
    phase_score = net.P @ pressure
    u = np.zeros(net.n_u)
    for node in net.nodes:
        sl = net.node_slice[node]
        u[sl.start + int(np.argmax(phase_score[sl]))] = 1.0
    return u


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    k = len(v)
    mu = np.sort(v)[::-1]
    cssv = np.cumsum(mu) - 1.0
    rho = np.nonzero(mu - cssv / np.arange(1, k + 1) > 0)[0][-1]
    theta = cssv[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def proportional_fair(net: Network, x, *, grad_tol: float = 1e-8,
                      max_iter: int = 20000) -> np.ndarray:
    """Per intersection, maximize the queue-weighted log of green fractions.

    Solved by projected gradient ascent with a floor on served fractions;
    intersections with no queued traffic get the uniform split.
    """
    x = np.asarray(x, dtype=float)
    floor = 1e-12
    u = net.uniform_control()
    for node in net.nodes:
        sl = net.node_slice[node]
        k = sl.stop - sl.start
        mvs = np.nonzero((net.ctrl_node == list(net.nodes).index(node))
                         & (x > 0))[0]
        if mvs.size == 0 or k == 1:
            continue
        Pn = net.P[sl][:, mvs]  # (k, len(mvs))
        w = x[mvs]
        un = np.full(k, 1.0 / k)
        step = 0.5 / max(w.sum(), 1.0)
        for _ in range(max_iter):
            S = np.maximum(Pn.T @ un, floor)
            g = Pn @ (w / S)
            nxt = _project_simplex(un + step * g)
            # backtracking on the ascent step
            val = w @ np.log(np.maximum(Pn.T @ un, floor))
            while step > 1e-14:
                cand_val = w @ np.log(np.maximum(Pn.T @ nxt, floor))
                if cand_val >= val - 1e-15:
                    break
                step *= 0.5
                nxt = _project_simplex(un + step * g)
            move = np.linalg.norm(nxt - un) / max(step, 1e-14)
            un = nxt
            if move <= grad_tol:
                break
            step = min(step * 1.3, 1e6)
        u[sl] = un
    return net.check_control(u)


def fixed_time(net: Network, t: int, schedule: Sequence[np.ndarray]) -> np.ndarray:
    """Cyclic open-loop control: schedule[t mod len(schedule)]."""
    if len(schedule) == 0:
        raise NetworkError("fixed-time schedule is empty")
    return np.asarray(schedule[t % len(schedule)], dtype=float)


def phase_cycle_schedule(net: Network) -> list:
    """Round-robin vertex schedule; each node cycles through its own phases."""
    counts = [net.node_slice[n].stop - net.node_slice[n].start
              for n in net.nodes]
    length = int(np.lcm.reduce(counts))
    return [net.vertex_control({n: t % c for n, c in zip(net.nodes, counts)})
            for t in range(length)]
