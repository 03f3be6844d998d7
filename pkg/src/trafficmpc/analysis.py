"""Closed-loop experiment drivers and stability diagnostics.

Runs controllers against the true plant, computes queue-norm metrics,
certifies the max-pressure drift inequality on sampled states, checks the
Lyapunov sandwich around the one-step MPC cost, and probes long-horizon
boundedness.  Stability is verified behaviorally; no comparison functions
are constructed.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .bounds import ParameterBounds
from .controllers import (fixed_time, lyapunov_objective, max_pressure,
                          mpc_objective, one_step_mpc, phase_cycle_schedule,
                          proportional_fair)
from .dynamics import QueueState, demand_vector, next_queues, step
from .network import Network, NetworkError


@dataclass
class TrajectoryLog:
    """Closed-loop run record: states x[t], controls u[t] applied at t."""
    x: np.ndarray  # (steps + 1, n_x)
    u: np.ndarray  # (steps, n_u)
    objective: np.ndarray  # (steps,) controller objective, nan if undefined
    exit_volume: np.ndarray  # (steps, n_exit)
    wall: np.ndarray  # (steps,) seconds per control decision
    net_hash: str = ""
    controller: str = ""
    seed: Optional[int] = None

    @property
    def steps(self) -> int:
        return len(self.u)


@dataclass
class DriftCertificate:
    eps: float
    k: float
    n_samples: int
    max_violation: float  # over the training samples; valid iff <= 0
    worst: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.eps > 0 and self.max_violation <= 0


def make_controller(net: Network, name: str, **params) -> Callable:
    """Controller factory: returns policy(x, t) -> u.

    Names: one-step-mpc, max-pressure, prop-fair, fixed-time.  The MPC
    policy warm-starts itself from its previous solution; pass seed to make
    its restarts reproducible per step.
    """
    if name == "one-step-mpc":
        seed = params.pop("seed", 0)
        kw = dict(grid_resolution=0.05, restarts=0, max_sweeps=2,
                  refine_tol=1e-6)
        kw.update(params)
        state = {"u": None}

        def policy(x, t):
            sol = one_step_mpc(net, x, warm_start=state["u"],
                               rng=None if seed is None else seed + t, **kw)
            state["u"] = sol.u
            return sol.u
        return policy
    if name == "max-pressure":
        return lambda x, t: max_pressure(net, x)
    if name == "prop-fair":
        return lambda x, t: proportional_fair(net, x, **params)
    if name == "fixed-time":
        schedule = params.get("schedule") or phase_cycle_schedule(net)
        return lambda x, t: fixed_time(net, t, schedule)
    raise NetworkError(f"unknown controller {name!r}")


def run_closed_loop(net: Network, policy: Callable, x0, lam, steps: int, *,
                    controller: str = "", seed=None) -> TrajectoryLog:
    """Simulate the true plant in feedback with policy(x, t)."""
    state = QueueState.initial(net, x0)
    lam = demand_vector(net, lam)
    xs = np.empty((steps + 1, net.n_x))
    us = np.empty((steps, net.n_u))
    obj = np.empty(steps)
    vols = np.empty((steps, len(net.exit_links)))
    wall = np.empty(steps)
    xs[0] = state.x
    for t in range(steps):
        t0 = time.perf_counter()
        u = policy(state.x, t)
        wall[t] = time.perf_counter() - t0
        obj[t] = float(mpc_objective(net, state.x, u)[0])
        state = step(net, state, u, lam)
        us[t] = u
        xs[t + 1] = state.x
        vols[t] = state.exit_volume
    return TrajectoryLog(xs, us, obj, vols, wall,
                         net_hash=net.topology_hash(),
                         controller=controller, seed=seed)


def compute_metrics(log: TrajectoryLog) -> Dict[str, np.ndarray]:
    """Per-step norm series plus cumulative throughput (total exit volume).
    Series are aligned with the state at each step."""
    if log.steps == 0:
        raise NetworkError("empty trajectory log")
    x = log.x
    return {
        "norm2_sq": (x ** 2).sum(axis=1),
        "norm1": np.abs(x).sum(axis=1),
        "norm_inf": np.abs(x).max(axis=1),
        "throughput": np.concatenate(
            [[0.0], np.cumsum(log.exit_volume.sum(axis=1))]),
    }


def metrics_to_csv(metrics: Dict[str, np.ndarray], path,
                   controller: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "metric", "value", "controller"])
        for name, series in metrics.items():
            for t, v in enumerate(series):
                w.writerow([t, name, repr(float(v)), controller])


def load_metrics_csv(path) -> Dict[str, Dict[str, np.ndarray]]:
    """Inverse of metrics_to_csv, grouped by controller then metric."""
    acc: Dict[str, Dict[str, list]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            acc.setdefault(row["controller"], {}).setdefault(
                row["metric"], []).append(float(row["value"]))
    return {c: {m: np.array(v) for m, v in ms.items()}
            for c, ms in acc.items()}


def compare_policies(net: Network, lam, x0, controllers: Dict[str, Callable],
                     horizon: int) -> Dict[str, dict]:
    """Run each controller from identical initial conditions; returns per
    controller the trajectory log, norm series, time average, and peak."""
    out = {}
    for name, policy in controllers.items():
        log = run_closed_loop(net, policy, x0, lam, horizon, controller=name)
        series = compute_metrics(log)["norm2_sq"]
        out[name] = {
            "log": log,
            "norm2_sq": series,
            "avg_norm2_sq": float(series[1:].mean()),
            "peak_norm2_sq": float(series.max()),
        }
    return out


# ---------------------------------------------------------------------------
# drift certificate (max-pressure Lyapunov decrease)
# ---------------------------------------------------------------------------

def sample_states(net: Network, lam, policy: Callable, n: int, *,
                  horizon: int = 300, x0=0.0, rng=None) -> np.ndarray:
    """States for drift certification: a closed-loop trajectory plus uniform
    random states in [0, 2 * max observed]."""
    rng = np.random.default_rng(rng)
    steps = min(horizon, n)
    log = run_closed_loop(net, policy, x0, lam, steps)
    traj = log.x[1:]
    hi = 2.0 * max(float(log.x.max()), 1.0)
    n_rand = max(n - len(traj), 0)
    rand = rng.uniform(0.0, hi, size=(n_rand, net.n_x))
    return np.vstack([traj, rand])[:n]


def fit_drift_certificate(net: Network, lam, policy: Callable,
                          samples, *, k_cap: float = 100.0) -> DriftCertificate:
    """Largest ε with ‖f(x, policy(x), λ)‖₂² − ‖x‖₂² ≤ −ε‖x‖₁ + k on every
    sample, k capped.

    The two-variable LP has a closed form: the objective is increasing in k,
    so k sits at the cap and ε is the minimum per-sample ratio.  A negative
    ε means no certificate exists at this cap; the report lists the worst
    samples.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    lam = demand_vector(net, lam)
    drift = np.empty(len(samples))
    n1 = np.empty(len(samples))
    for r, x in enumerate(samples):
        f = next_queues(net, x, policy(x, r), lam)
        drift[r] = float(f @ f - x @ x)
        n1[r] = float(np.abs(x).sum())
    k = float(k_cap)
    pos = n1 > 0
    if np.any(drift[~pos] > k):
        eps = -np.inf
    elif not np.any(pos):
        eps = 1.0
    else:
        eps = float(np.min((k - drift[pos]) / n1[pos]))
    violation = drift + (eps * n1 if eps > 0 else 0.0) - k
    worst_idx = np.argsort(-violation)[:5]
    worst = [{"index": int(r), "drift": float(drift[r]),
              "norm1": float(n1[r])} for r in worst_idx]
    return DriftCertificate(eps=eps, k=k, n_samples=len(samples),
                            max_violation=float(violation.max()),
                            worst=worst)


# ---------------------------------------------------------------------------
# Lyapunov sandwich around the one-step MPC cost
# ---------------------------------------------------------------------------

def lyapunov_bounds_check(net: Network, lam, eps: float, samples) -> float:
    """Max violation of the sandwich
    ε‖x‖₁ + ‖f‖₂² <= V(x,u) <= ε‖x‖₁ + ‖f‖₂² + Σ_entry (C̄² + 2 R λ C̄)
    over samples of (x, u), where V is the Lyapunov form of the MPC cost and
    f the true next state.  Nonpositive means the sandwich holds."""
    lam = demand_vector(net, lam)
    ent = np.nonzero(net.entry_mask)[0]
    lam_mv = lam[net.entry_pos_of_movement[ent]]
    slack = float((net.C[ent] ** 2
                   + 2.0 * net.R[ent] * lam_mv * net.C[ent]).sum())
    worst = -np.inf
    for x, u in samples:
        x = np.asarray(x, dtype=float)
        v = lyapunov_objective(net, x, u, lam, eps)
        f = next_queues(net, x, u, lam)
        base = eps * np.abs(x).sum() + float(f @ f)
        worst = max(worst, base - v, v - base - slack)
    return float(worst)


# ---------------------------------------------------------------------------
# long-horizon boundedness
# ---------------------------------------------------------------------------

def boundedness_probe(net: Network, lam, policy: Callable, *,
                      horizon: int = 10000, x0=0.0,
                      slope_threshold: float = 1e-4) -> dict:
    """Behavioral stability verdict over a long closed-loop run.

    bounded: the max ‖x‖_inf over the last third does not exceed the middle
    third's max beyond roundoff.  growing: a positive linear trend over the
    last half with slope above slope_threshold per step.
    """
    log = run_closed_loop(net, policy, x0, lam, horizon)
    series = np.abs(log.x[1:]).max(axis=1)
    third = horizon // 3
    mid = float(series[third:2 * third].max())
    last = float(series[2 * third:].max())
    bounded = last <= mid * (1.0 + 1e-6)
    half = series[horizon // 2:]
    slope = float(np.polyfit(np.arange(len(half)), half, 1)[0])
    return {
        "bounded": bool(bounded),
        "growing": bool(slope > slope_threshold),
        "mid_third_max": mid,
        "last_third_max": last,
        "tail_slope": slope,
        "final_norm_inf": float(series[-1]),
    }
