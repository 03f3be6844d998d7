"""Steady link flows and membership in the maximal-throughput demand region.

Flow conservation is solved in inflow form (the flow on a link equals the
turn-ratio-weighted sum of flows on its upstream links), which makes exit
flow equal entry demand on acyclic routings.  Demand feasibility decomposes
into one small LP per intersection because the green fraction of a movement
depends only on the phase weights at its own node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lp
from .dynamics import demand_vector
from .network import Network

CONSERVATION_TOL = 1e-10
MARGIN_TOL = 1e-9


class FlowError(RuntimeError):
    pass


@dataclass
class FlowVector:
    """Per-link steady flow, ordered as net.links."""
    q: np.ndarray

    def of(self, net: Network, link_id: str) -> float:
        return float(self.q[net.link_index[link_id]])


@dataclass
class FeasibilityCertificate:
    feasible: bool
    witness: Optional[np.ndarray]  # control in U, when feasible
    margin: float  # min over movements of C_ij S_ij(u) - q_i R_ij
    node_margins: dict


def solve_flow(net: Network, lam) -> FlowVector:
    """Unique steady flow for a constant demand vector."""
    lam = demand_vector(net, lam)
    n = net.n_links
    # q = b + T q, where T[j, i] = R_ij for each movement (i, j)
    T = np.zeros((n, n))
    mv = np.arange(net.n_x)
    np.add.at(T, (net.to_link[mv], net.from_link[mv]), net.R[mv])
    b = np.zeros(n)
    b[net.entry_link_idx] = lam
    T[net.entry_link_idx, :] = 0.0  # entry flows are pinned to demand
    try:
        q = np.linalg.solve(np.eye(n) - T, b)
    except np.linalg.LinAlgError as e:
        raise FlowError(f"singular conservation system: {e}") from None
    residual = np.max(np.abs(q - (b + T @ q)), initial=0.0)
    if residual > CONSERVATION_TOL or np.any(q < -CONSERVATION_TOL):
        raise FlowError(
            f"conservation solve failed (residual {residual:.3e}); routing"
            " cycles may be non-contractive")
    return FlowVector(np.maximum(q, 0.0))


def check_demand_feasible(net: Network, lam) -> FeasibilityCertificate:
    """Certify whether the steady flow induced by lam can be strictly served
    by some fixed control.

    Per node n, solves max t subject to u in the node simplex and
    sum_m u_m C_ij S^m_ij >= q_i R_ij + t for every movement controlled at n.
    Feasible iff every node optimum exceeds MARGIN_TOL.
    """
    q = solve_flow(net, lam).q
    witness = np.zeros(net.n_u)
    node_margins = {}
    margin = np.inf
    for node in net.nodes:
        sl = net.node_slice[node]
        k = sl.stop - sl.start
        mvs = np.nonzero(net.ctrl_node == list(net.nodes).index(node))[0]
        if mvs.size == 0:
            witness[sl.start] = 1.0
            continue
        # variables: (u_1..u_k, t+, t-); maximize t = t+ - t- (may be negative)
        c = np.zeros(k + 2)
        c[-2], c[-1] = 1.0, -1.0
        a_ub = np.zeros((len(mvs), k + 2))
        b_ub = np.zeros(len(mvs))
        for r, m in enumerate(mvs):
            a_ub[r, :k] = -net.C[m] * net.P[sl, m]
            a_ub[r, -2], a_ub[r, -1] = 1.0, -1.0
            b_ub[r] = -q[net.from_link[m]] * net.R[m]
        res = lp.lp_solve(c, a_ub, b_ub, simplex_groups=[k], n_extra=2)
        if res.status != "optimal":
            raise FlowError(f"feasibility LP failed at node {node}: {res.status}")
        t_star = res.z[-2] - res.z[-1]
        node_margins[node] = float(t_star)
        margin = min(margin, float(t_star))
        witness[sl] = res.z[:k]
    feasible = margin > MARGIN_TOL
    return FeasibilityCertificate(feasible,
                                  witness if feasible else None,
                                  float(margin), node_margins)
