"""Finite-time identification of saturation rates and turn ratios.

Each unknown parameter has a terminal set: a region of (queue, control)
space where one step of the true dynamics pins the parameter down exactly.
The identifier steers the network into the terminal set of the current
target (per-node LPs plus a drain/fill exploration policy), applies the
certifying control, and inverts the dynamics for the estimate.  Every
transition is also checked against all remaining targets, so one step often
collapses several intervals at once.

Estimated quantities: C for every movement, R for movements leaving
internal links.  Turn ratios of entry movements are never needed by the
estimators and their intervals are left untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import lp
from .bounds import ParameterBounds
from .controllers import max_pressure
from .dynamics import QueueState, step
from .network import Network

R_INTERNAL = "R-internal"
C_INTERNAL = "C-internal"
C_ENTRY_EXIT = "C-entry-exit"
C_ENTRY_INTERNAL = "C-entry-internal"

MASS_MIN = 1e-2  # feeder mass needed before dividing by it
X_MIN = 1e-2  # target queue needed before dividing by S(u)
S_MIN = 1e-3  # smallest usable green fraction at the target
R_MIN = 1e-3  # smallest usable witness turn ratio
SAFETY = 1e-7  # slack requested from the terminal-control LPs


class IdentificationError(RuntimeError):
    pass


@dataclass
class TerminalSpec:
    """One parameter to estimate and the terminal-set kind that certifies
    it."""
    kind: str
    q: int  # movement index

    def label(self, net: Network) -> str:
        return f"{self.kind}:{net.movement_label(self.q)}"


@dataclass
class IdentificationResult:
    bounds: ParameterBounds
    steps: int
    converged: bool
    events: List[dict]
    state: QueueState
    unresolved: List[str] = field(default_factory=list)
    trajectory: Optional[np.ndarray] = None  # (steps + 1, n_x) when recorded


def make_target_specs(net: Network) -> List[TerminalSpec]:
    """All parameters to identify, ordered so prerequisites come first:
    internal turn ratios, internal saturation rates, then entry rates."""
    internal = [q for q in range(net.n_x) if net.internal_mask[q]]
    entry = [q for q in range(net.n_x) if net.entry_mask[q]]
    specs = [TerminalSpec(R_INTERNAL, q) for q in internal]
    specs += [TerminalSpec(C_INTERNAL, q) for q in internal]
    for q in entry:
        j = net.to_link[q]
        if j in net.exit_link_idx:
            specs.append(TerminalSpec(C_ENTRY_EXIT, q))
        else:
            specs.append(TerminalSpec(C_ENTRY_INTERNAL, q))
    return specs


def spec_done(b: ParameterBounds, s: TerminalSpec) -> bool:
    if s.kind == R_INTERNAL:
        return b.r_collapsed(s.q)
    return b.c_collapsed(s.q)


def _feeders(net: Network, link: int) -> np.ndarray:
    return np.asarray(net.in_movements[link], dtype=int)


def _witness(net: Network, b: ParameterBounds, j: int) -> Optional[int]:
    """Downstream movement (j, l) whose known parameters let the inflow to
    link j be read off its queue change.  Picks the largest collapsed turn
    ratio for conditioning."""
    best, best_r = None, R_MIN
    for w in np.nonzero(net.from_link == j)[0]:
        if b.c_collapsed(w) and b.r_collapsed(w) and b.r_hi[w] >= best_r:
            best, best_r = int(w), b.r_hi[w]
    return best


def spec_ready(net: Network, b: ParameterBounds, s: TerminalSpec) -> bool:
    """Whether the estimator's prerequisites (other collapsed parameters)
    are available."""
    if s.kind == C_INTERNAL:
        return b.r_collapsed(s.q)
    if s.kind == C_ENTRY_INTERNAL:
        return _witness(net, b, int(net.to_link[s.q])) is not None
    return True


# ---------------------------------------------------------------------------
# terminal sets
# ---------------------------------------------------------------------------

def terminal_membership(net: Network, b: ParameterBounds, s: TerminalSpec,
                        x, u) -> bool:
    """Exact predicate: does one true-dynamics step from (x, u) determine
    the parameter of s?  Verified with the interval endpoints, so a True
    answer is sound whatever the true parameters are."""
    x = np.asarray(x, dtype=float)
    S = net.signal(u)
    q = s.q
    i = int(net.from_link[q])

    if s.kind == R_INTERNAL:
        F = _feeders(net, i)
        return (x[q] <= b.c_lo[q] * S[q]
                and np.all(x[F] <= b.c_lo[F] * S[F])
                and x[F].sum() >= MASS_MIN)

    if s.kind == C_INTERNAL:
        F = _feeders(net, i)
        return (b.r_collapsed(q)
                and S[q] >= S_MIN
                and x[q] >= b.c_hi[q] * S[q]
                and np.all(x[F] <= b.c_lo[F] * S[F]))

    # entry kinds: the target saturates while every sibling movement into
    # the same downstream link is fully served
    j = int(net.to_link[q])
    sib = np.array([m for m in _feeders(net, j) if m != q], dtype=int)
    base = (S[q] >= S_MIN
            and x[q] >= b.c_hi[q] * S[q]
            and np.all(x[sib] <= b.c_lo[sib] * S[sib]))
    if s.kind == C_ENTRY_EXIT:
        return base
    w = _witness(net, b, j)
    return base and w is not None


# ---------------------------------------------------------------------------
# per-node control synthesis
# ---------------------------------------------------------------------------

def _spec_constraints(net: Network, b: ParameterBounds, s: TerminalSpec):
    """Constraints grouped by controlling node: (serve, saturate) movement
    lists.  serve movements must fully discharge (C_lo S >= x); the saturate
    movement must not (C_hi S <= x)."""
    q = s.q
    i = int(net.from_link[q])
    if s.kind == R_INTERNAL:
        serve = [q] + list(_feeders(net, i))
        saturate = []
    elif s.kind == C_INTERNAL:
        serve = list(_feeders(net, i))
        saturate = [q]
    else:
        j = int(net.to_link[q])
        serve = [m for m in _feeders(net, j) if m != q]
        saturate = [q]
    by_node = {}
    for m in serve:
        by_node.setdefault(int(net.ctrl_node[m]), ([], []))[0].append(m)
    for m in saturate:
        by_node.setdefault(int(net.ctrl_node[m]), ([], []))[1].append(m)
    return by_node


def _node_terminal_lp(net: Network, b: ParameterBounds, x, node_idx: int,
                      serve, saturate) -> Optional[np.ndarray]:
    """Phase weights at one node meeting serve/saturate constraints with a
    small safety slack, or None.  With a saturate movement present the green
    fraction of that movement is maximized; otherwise the minimum serve
    slack is."""
    sl = net.node_slice[net.nodes[node_idx]]
    k = sl.stop - sl.start
    rows, rhs = [], []
    for m in serve:
        row = np.zeros(k + (0 if saturate else 1))
        row[:k] = -b.c_lo[m] * net.P[sl, m]
        if not saturate:
            row[-1] = 1.0  # slack variable t
        rows.append(row)
        rhs.append(-(x[m] + SAFETY))
    if saturate:
        qq = saturate[0]
        row = np.zeros(k)
        row[:k] = b.c_hi[qq] * net.P[sl, qq]
        rows.append(row)
        rhs.append(x[qq] - SAFETY)
        c = np.zeros(k)
        c[:k] = net.P[sl, qq]
        res = lp.lp_solve(c, np.array(rows), np.array(rhs),
                          simplex_groups=[k])
        if res.status != "optimal" or res.value < S_MIN:
            return None
        return res.z[:k]
    c = np.zeros(k + 1)
    c[-1] = 1.0
    res = lp.lp_solve(c, np.array(rows), np.array(rhs),
                      simplex_groups=[k], n_extra=1)
    if res.status != "optimal":
        return None
    return res.z[:k]


def find_terminal_u(net: Network, b: ParameterBounds, s: TerminalSpec,
                    x) -> Optional[np.ndarray]:
    """A control placing (x, u) in the terminal set of s, or None.  Nodes
    without constraints run max-pressure."""
    x = np.asarray(x, dtype=float)
    q = s.q
    if s.kind == R_INTERNAL:
        F = _feeders(net, int(net.from_link[q]))
        if x[F].sum() < MASS_MIN:
            return None
    else:
        if x[q] < X_MIN or not spec_ready(net, b, s):
            return None
    u = max_pressure(net, x)
    for node_idx, (serve, saturate) in _spec_constraints(net, b, s).items():
        block = _node_terminal_lp(net, b, x, node_idx, serve, saturate)
        if block is None:
            return None
        u[net.node_slice[net.nodes[node_idx]]] = block
    u = net.check_control(u)
    return u if terminal_membership(net, b, s, x, u) else None


def _vertex_scoring(net: Network, u, node_idx: int, score) -> None:
    """Overwrite one node's block with the vertex maximizing a per-phase
    score."""
    sl = net.node_slice[net.nodes[node_idx]]
    u[sl] = 0.0
    u[sl.start + int(np.argmax(score))] = 1.0


def _exploration_control(net: Network, b: ParameterBounds, s: TerminalSpec,
                         x) -> tuple:
    """Drive the state toward the terminal set of s.

    Drain mode serves the constrained movements as hard as possible while
    starving their upstream inflow; fill mode routes traffic into the links
    whose queues are needed strictly positive.  Returns (u, mode).
    """
    x = np.asarray(x, dtype=float)
    q = s.q
    i = int(net.from_link[q])
    u = max_pressure(net, x)

    fill_links = []  # links whose queues must grow
    if s.kind == R_INTERNAL:
        F = _feeders(net, i)
        if x[F].sum() < MASS_MIN:
            # accumulate feeder mass; entry feeders fill from demand on
            # their own, internal ones need their upstream served
            fill_links = [int(net.from_link[m]) for m in F
                          if net.internal_mask[m]]
            hold = F
            mode = "fill"
        else:
            serve = np.concatenate([[q], F])
            mode = "drain"
    else:
        if x[q] < X_MIN:
            if s.kind == C_INTERNAL:
                # inflow to the target comes from its feeders
                fill_links = [i]
                hold = np.array([], dtype=int)
            else:
                # entry queues fill from demand; nothing to steer
                hold = np.array([], dtype=int)
            mode = "fill"
        elif s.kind == C_INTERNAL:
            serve = _feeders(net, i)
            mode = "drain"
        else:
            j = int(net.to_link[q])
            serve = np.array([m for m in _feeders(net, j) if m != q],
                             dtype=int)
            mode = "drain"

    if mode == "drain":
        by_node = {}
        for m in serve:
            by_node.setdefault(int(net.ctrl_node[m]), []).append(m)
        blocked = set()
        for m in serve:
            if net.internal_mask[m]:
                blocked.update(int(v)
                               for v in _feeders(net, int(net.from_link[m])))
        for node_idx, mvs in by_node.items():
            sl = net.node_slice[net.nodes[node_idx]]
            k = sl.stop - sl.start
            rows = np.zeros((len(mvs), k + 2))
            rhs = np.zeros(len(mvs))
            for r, m in enumerate(mvs):
                rows[r, :k] = -b.c_lo[m] * net.P[sl, m]
                rows[r, -2], rows[r, -1] = 1.0, -1.0
                rhs[r] = -x[m]
            c = np.zeros(k + 2)
            c[-2], c[-1] = 1.0, -1.0  # slack may be negative while draining
            res = lp.lp_solve(c, rows, rhs, simplex_groups=[k], n_extra=2)
            if res.status == "optimal":
                u[net.node_slice[net.nodes[node_idx]]] = res.z[:k]
        for node_idx in range(len(net.nodes)):
            mvs = [m for m in blocked
                   if net.ctrl_node[m] == node_idx and m not in set(serve)]
            if mvs and node_idx not in by_node:
                sl = net.node_slice[net.nodes[node_idx]]
                score = -(b.c_hi[mvs][None].T * net.P[sl, mvs].T).sum(axis=0)
                _vertex_scoring(net, u, node_idx, score)
    else:
        grow = set()
        for link in fill_links:
            grow.update(int(v) for v in _feeders(net, link))
        for node_idx in range(len(net.nodes)):
            sl = net.node_slice[net.nodes[node_idx]]
            g = [m for m in grow if net.ctrl_node[m] == node_idx]
            h = [m for m in hold if net.ctrl_node[m] == node_idx]
            if g:
                score = (b.c_lo[g][None].T * net.P[sl, g].T).sum(axis=0)
                _vertex_scoring(net, u, node_idx, score)
            elif h:
                score = -(b.c_hi[h][None].T * net.P[sl, h].T).sum(axis=0)
                _vertex_scoring(net, u, node_idx, score)
    return net.check_control(u), mode


def augmented_mpc_step(net: Network, b: ParameterBounds, s: TerminalSpec,
                       x, l=None) -> tuple:
    """One control decision of the identification MPC.

    If the terminal set of s is reachable right now the certifying control
    is returned (stage cost zero); otherwise an exploration control that
    makes progress toward it.  l weights the reported stage cost l^T x and
    defaults to all ones.
    """
    x = np.asarray(x, dtype=float)
    u = find_terminal_u(net, b, s, x)
    if u is not None:
        return u, {"mode": "terminal", "cost": 0.0}
    u, mode = _exploration_control(net, b, s, x)
    l = np.ones(net.n_x) if l is None else np.asarray(l, dtype=float)
    return u, {"mode": mode, "cost": float(l @ x)}


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def estimate_parameter(net: Network, b: ParameterBounds, s: TerminalSpec,
                       x_prev, u, state_next: QueueState) -> float:
    """Invert one certified transition.  Only call when
    terminal_membership(net, b, s, x_prev, u) held."""
    x_prev = np.asarray(x_prev, dtype=float)
    S = net.signal(u)
    q = s.q
    i = int(net.from_link[q])

    if s.kind == R_INTERNAL:
        F = _feeders(net, i)
        return float(state_next.x[q] / x_prev[F].sum())

    if s.kind == C_INTERNAL:
        F = _feeders(net, i)
        inflow = b.r_hi[q] * x_prev[F].sum()
        return float((x_prev[q] - state_next.x[q] + inflow) / S[q])

    j = int(net.to_link[q])
    sib = np.array([m for m in _feeders(net, j) if m != q], dtype=int)
    served_sib = x_prev[sib].sum()
    if s.kind == C_ENTRY_EXIT:
        pos = list(net.exit_link_idx).index(j)
        vol = float(state_next.exit_volume[pos])
        return float((vol - served_sib) / S[q])

    w = _witness(net, b, j)
    if w is None:
        raise IdentificationError(
            f"no witness movement for {s.label(net)}")
    out_w = max(x_prev[w] - b.c_hi[w] * S[w], 0.0)
    inflow_j = (state_next.x[w] - out_w) / b.r_hi[w]
    return float((inflow_j - served_sib) / S[q])


def _apply_estimate(b: ParameterBounds, s: TerminalSpec, value: float):
    if s.kind == R_INTERNAL:
        b.collapse_r(s.q, value)
    else:
        b.collapse_c(s.q, value)


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def run_identification(net: Network, bounds: ParameterBounds, x0, lam, *,
                       max_steps: int = 2000, l=None,
                       record: bool = False) -> IdentificationResult:
    """Identify every saturation rate and internal turn ratio by steering
    the plant through the terminal sets.

    The plant is simulated with the true parameters of net; the estimator
    only ever reads measured queues, applied controls, and the interval
    bounds.  Each transition is checked against all outstanding targets, so
    a single step can collapse many intervals.
    """
    b = bounds.copy()
    state = QueueState.initial(net, x0)
    pending = [s for s in make_target_specs(net) if not spec_done(b, s)]
    events: List[dict] = []
    traj = [state.x.copy()] if record else None
    t = 0
    while pending and t < max_steps:
        target = next((s for s in pending if spec_ready(net, b, s)),
                      pending[0])
        u, info = augmented_mpc_step(net, b, target, state.x, l)
        x_prev = state.x.copy()
        state = step(net, state, u, lam)
        t += 1
        if record:
            traj.append(state.x.copy())
        resolved = []
        for s in pending:
            if not spec_ready(net, b, s):
                continue
            if not terminal_membership(net, b, s, x_prev, u):
                continue
            value = estimate_parameter(net, b, s, x_prev, u, state)
            _apply_estimate(b, s, value)
            resolved.append(s)
            if record:
                events.append({"step": t, "target": s.label(net),
                               "value": value,
                               "driven": s is target,
                               "mode": info["mode"]})
        if resolved:
            done = set(id(s) for s in resolved)
            pending = [s for s in pending if id(s) not in done]
    unresolved = [s.label(net) for s in pending]
    return IdentificationResult(bounds=b, steps=t, converged=not pending,
                                events=events, state=state,
                                unresolved=unresolved,
                                trajectory=np.array(traj) if record else None)
