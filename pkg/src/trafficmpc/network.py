"""Directed signalized traffic network: links, movements, phases, controls.

The network is immutable after construction.  Queues live on *movements*
(ordered link pairs); signal controls are convex weights over the phases of
each intersection, and the per-movement green fraction is affine in those
weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

ENTRY = "entry"
INTERNAL = "internal"
EXIT = "exit"

SIMPLEX_TOL = 1e-9


class NetworkError(ValueError):
    """Structural problem in a network definition or a control vector."""


@dataclass(frozen=True)
class Link:
    id: str
    cls: str  # one of ENTRY / INTERNAL / EXIT
    start: Optional[str] = None
    end: Optional[str] = None


@dataclass(frozen=True)
class Movement:
    from_link: str
    to_link: str
    index: int


@dataclass(frozen=True)
class Phase:
    node: str
    served: tuple  # movement indices
    index: int  # global position in the control vector


class Network:
    """Immutable topology plus true parameters (C, R) and phase structure.

    Movement indexing is lexicographic in (from_link, to_link), fixed at
    construction, so state vectors have a deterministic layout.
    """

    def __init__(self, links, movements, c_by_movement, r_by_movement,
                 phases_by_node):
        """Build a network.

        links: iterable of Link
        movements: iterable of (from_link_id, to_link_id)
        c_by_movement / r_by_movement: dict (from, to) -> float
        phases_by_node: dict node -> list of phases, each phase a list of
            (from, to) movement pairs.  Node order follows dict order.
        """
        self.links = tuple(sorted(links, key=lambda l: l.id))
        self.link_index = {l.id: k for k, l in enumerate(self.links)}
        if len(self.link_index) != len(self.links):
            raise NetworkError("duplicate link ids")
        self.n_links = len(self.links)

        self.entry_links = tuple(l.id for l in self.links if l.cls == ENTRY)
        self.internal_links = tuple(l.id for l in self.links if l.cls == INTERNAL)
        self.exit_links = tuple(l.id for l in self.links if l.cls == EXIT)
        self._entry_pos = {lid: k for k, lid in enumerate(self.entry_links)}
        self._exit_pos = {lid: k for k, lid in enumerate(self.exit_links)}

        pairs = sorted(set(map(tuple, movements)))
        self.movements = tuple(
            Movement(f, t, k) for k, (f, t) in enumerate(pairs))
        self.movement_index = {(m.from_link, m.to_link): m.index
                               for m in self.movements}
        self.n_x = len(self.movements)

        for m in self.movements:
            if m.from_link not in self.link_index:
                raise NetworkError(f"movement from unknown link {m.from_link!r}")
            if m.to_link not in self.link_index:
                raise NetworkError(f"movement to unknown link {m.to_link!r}")

        self.from_link = np.array(
            [self.link_index[m.from_link] for m in self.movements], dtype=int)
        self.to_link = np.array(
            [self.link_index[m.to_link] for m in self.movements], dtype=int)
        cls_arr = np.array([l.cls for l in self.links])
        self.entry_mask = cls_arr[self.from_link] == ENTRY
        self.internal_mask = cls_arr[self.from_link] == INTERNAL
        # entry-link position of each entry-origin movement (for demand lookup)
        self.entry_pos_of_movement = np.array(
            [self._entry_pos.get(m.from_link, -1) for m in self.movements],
            dtype=int)

        self.C = np.zeros(self.n_x)
        self.R = np.zeros(self.n_x)
        for m in self.movements:
            key = (m.from_link, m.to_link)
            self.C[m.index] = float(c_by_movement[key])
            self.R[m.index] = float(r_by_movement[key])
        self.C.setflags(write=False)
        self.R.setflags(write=False)

        # Phase architecture.  u is the concatenation of per-node simplexes.
        self.nodes = tuple(phases_by_node.keys())
        phases = []
        node_slice = {}
        for node in self.nodes:
            start = len(phases)
            for served_pairs in phases_by_node[node]:
                served = tuple(sorted(self.movement_index[tuple(p)]
                                      for p in served_pairs))
                phases.append(Phase(node, served, len(phases)))
            node_slice[node] = slice(start, len(phases))
        self.phases = tuple(phases)
        self.node_slice = node_slice
        self.n_u = len(self.phases)

        # P[m, q] = 1 if phase m serves movement q
        P = np.zeros((self.n_u, self.n_x))
        for ph in self.phases:
            P[ph.index, list(ph.served)] = 1.0
        P.setflags(write=False)
        self.P = P

        # node controlling each movement = end node of its from-link
        node_pos = {n: k for k, n in enumerate(self.nodes)}
        ctrl = np.full(self.n_x, -1, dtype=int)
        for m in self.movements:
            end = self.links[self.from_link[m.index]].end
            if end in node_pos:
                ctrl[m.index] = node_pos[end]
        self.ctrl_node = ctrl

        # movements into each link (by link index)
        self.in_movements = tuple(
            tuple(np.nonzero(self.to_link == l)[0]) for l in range(self.n_links))
        # arrival aggregation matrix: arr = A @ served_flow
        A = np.zeros((self.n_links, self.n_x))
        A[self.to_link, np.arange(self.n_x)] = 1.0
        A.setflags(write=False)
        self._arrival = A
        self.exit_link_idx = np.array(
            [self.link_index[l] for l in self.exit_links], dtype=int)
        self.entry_link_idx = np.array(
            [self.link_index[l] for l in self.entry_links], dtype=int)

    # -- controls ----------------------------------------------------------

    def check_control(self, u) -> np.ndarray:
        """Validate u against the phase structure; renormalize per-node sums
        that are within SIMPLEX_TOL of one, reject anything else."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_u,):
            raise NetworkError(
                f"control has shape {u.shape}, expected ({self.n_u},)")
        if np.any(u < -SIMPLEX_TOL):
            raise NetworkError("control has negative phase weight")
        u = np.maximum(u, 0.0)
        out = u.copy()
        for node in self.nodes:
            sl = self.node_slice[node]
            s = out[sl].sum()
            if abs(s - 1.0) > SIMPLEX_TOL:
                raise NetworkError(
                    f"phase weights at node {node!r} sum to {s}, expected 1")
            out[sl] /= s
        return out

    def uniform_control(self) -> np.ndarray:
        u = np.zeros(self.n_u)
        for node in self.nodes:
            sl = self.node_slice[node]
            u[sl] = 1.0 / (sl.stop - sl.start)
        return u

    def vertex_control(self, phase_of_node) -> np.ndarray:
        """Vertex control: full weight on one phase per node.

        phase_of_node: dict node -> local phase index (0-based within node).
        Missing nodes default to their first phase.
        """
        u = np.zeros(self.n_u)
        for node in self.nodes:
            sl = self.node_slice[node]
            u[sl.start + phase_of_node.get(node, 0)] = 1.0
        return u

    def node_of_phase(self, m: int) -> str:
        return self.phases[m].node

    def signal(self, u) -> np.ndarray:
        """Per-movement green fraction S(u) = sum_m u_m S^m."""
        return np.asarray(u, dtype=float) @ self.P

    def signal_batch(self, U) -> np.ndarray:
        return np.asarray(U, dtype=float) @ self.P

    # -- misc --------------------------------------------------------------

    def movement_label(self, q: int) -> str:
        m = self.movements[q]
        return f"{m.from_link}->{m.to_link}"

    def topology_hash(self) -> str:
        import hashlib
        blob = json.dumps(network_to_config(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_signal(net: Network, u) -> np.ndarray:
    """Green fraction per movement for a validated control."""
    return net.signal(net.check_control(u))


def validate_network(net: Network):
    """Check all structural invariants; returns a list of violation strings
    (empty when the network is valid)."""
    report = []
    for l in net.links:
        if l.cls == ENTRY and l.start is not None:
            report.append(f"entry link {l.id} has a start node")
        if l.cls == EXIT and l.end is not None:
            report.append(f"exit link {l.id} has an end node")
        if l.cls == INTERNAL and (l.start is None or l.end is None):
            report.append(f"internal link {l.id} missing an endpoint")
        if l.cls not in (ENTRY, INTERNAL, EXIT):
            report.append(f"link {l.id} has unknown class {l.cls!r}")

    # movements must leave non-exit links and connect end(from) == start(to)
    for m in net.movements:
        lf = net.links[net.link_index[m.from_link]]
        lt = net.links[net.link_index[m.to_link]]
        if lf.cls == EXIT:
            report.append(f"movement {m.from_link}->{m.to_link} leaves an exit link")
        elif lf.end is None or lf.end != lt.start:
            report.append(
                f"movement {m.from_link}->{m.to_link} does not pass through a"
                f" shared node")

    # turn-ratio rows sum to one over each non-exit link with movements
    for l in net.links:
        if l.cls == EXIT:
            continue
        idx = np.nonzero(net.from_link == net.link_index[l.id])[0]
        if idx.size == 0:
            if l.cls != EXIT:
                report.append(f"link {l.id} has no outgoing movement")
            continue
        s = net.R[idx].sum()
        if abs(s - 1.0) > 1e-9:
            report.append(f"turn ratios out of link {l.id} sum to {s:.6g}")

    for q in range(net.n_x):
        if net.C[q] <= 0:
            report.append(f"movement {net.movement_label(q)} has C <= 0")

    # every movement served by at least one phase
    served_any = net.P.sum(axis=0) >= 1
    for q in np.nonzero(~served_any)[0]:
        report.append(
            f"movement {net.movement_label(q)} appears in no phase"
            " (Assumption 1(1))")

    # phases serve only movements controlled at their node
    node_pos = {n: k for k, n in enumerate(net.nodes)}
    for ph in net.phases:
        for q in ph.served:
            if net.ctrl_node[q] != node_pos[ph.node]:
                report.append(
                    f"phase {ph.index} at node {ph.node} serves movement"
                    f" {net.movement_label(q)} of another node")

    # for each link j with a start node, some phase there serves nothing into j
    for l in net.links:
        if l.start is None or l.start not in node_pos:
            continue
        into_j = set(net.in_movements[net.link_index[l.id]])
        phases_at = [ph for ph in net.phases if ph.node == l.start]
        if phases_at and not any(not (set(ph.served) & into_j)
                                 for ph in phases_at):
            report.append(
                f"every phase at node {l.start} serves a movement into link"
                f" {l.id} (Assumption 1(2))")
    return report


# ---------------------------------------------------------------------------
# The four-intersection demonstration grid
# ---------------------------------------------------------------------------

# headings as unit grid steps; left = ccw rotation, right = cw
_HEADINGS = {"E": (1, 0), "W": (-1, 0), "N": (0, 1), "S": (0, -1)}
_LEFT = {"E": "N", "N": "W", "W": "S", "S": "E"}
_RIGHT = {"E": "S", "S": "W", "W": "N", "N": "E"}

# turn -> (ratio for internal approach, saturation rate)
_INTERNAL_RATIO = {"left": 0.17, "through": 0.33, "right": 0.5}
_SAT_RATE = {"left": 1.5, "through": 1.6, "right": 1.7}


def make_paper_grid(internal_ratios=None, entry_ratio=None, sat_rates=None):
    """The 24-link four-intersection grid with the four-phase architecture.

    Default parameters: internal turn ratios (left, through, right) =
    (0.17, 0.33, 0.5); entry turn ratios 1/3 each; saturation rates
    (left, through, right) = (1.5, 1.6, 1.7).
    """
    internal_ratios = dict(_INTERNAL_RATIO if internal_ratios is None
                           else internal_ratios)
    sat_rates = dict(_SAT_RATE if sat_rates is None else sat_rates)
    entry_ratio = 1.0 / 3.0 if entry_ratio is None else float(entry_ratio)

    # nodes laid out on a unit square
    nodes = {"n1": (0, 1), "n2": (1, 1), "n3": (0, 0), "n4": (1, 0)}

    links = []
    heading = {}

    def add(lid, cls, start, end, hdg):
        links.append(Link(lid, cls, start, end))
        heading[lid] = hdg

    # boundary sides in fixed order; entry odd ids, exit even ids
    sides = [("n1", "W"), ("n1", "N"), ("n2", "N"), ("n2", "E"),
             ("n4", "E"), ("n4", "S"), ("n3", "S"), ("n3", "W")]
    opposite = {"E": "W", "W": "E", "N": "S", "S": "N"}
    for k, (node, outside) in enumerate(sides):
        eid, xid = str(2 * k + 1), str(2 * k + 2)
        add(eid, ENTRY, None, node, opposite[outside])  # traffic flows inward
        add(xid, EXIT, node, None, outside)

    internal_pairs = [("17", "n1", "n2"), ("18", "n2", "n1"),
                      ("19", "n2", "n4"), ("20", "n4", "n2"),
                      ("21", "n4", "n3"), ("22", "n3", "n4"),
                      ("23", "n3", "n1"), ("24", "n1", "n3")]
    for lid, a, b in internal_pairs:
        dx = nodes[b][0] - nodes[a][0]
        dy = nodes[b][1] - nodes[a][1]
        hdg = {(1, 0): "E", (-1, 0): "W", (0, 1): "N", (0, -1): "S"}[(dx, dy)]
        add(lid, INTERNAL, a, b, hdg)

    by_node_out = {}
    for l in links:
        if l.start is not None:
            by_node_out.setdefault(l.start, {})[heading[l.id]] = l.id

    movements, c_map, r_map = [], {}, {}
    turn_of = {}
    for l in links:
        if l.cls == EXIT or l.end is None:
            continue
        outs = by_node_out[l.end]
        h = heading[l.id]
        for turn, hdg in (("left", _LEFT[h]), ("through", h),
                          ("right", _RIGHT[h])):
            j = outs.get(hdg)
            if j is None:
                continue
            movements.append((l.id, j))
            turn_of[(l.id, j)] = turn
            c_map[(l.id, j)] = sat_rates[turn]
            r_map[(l.id, j)] = (entry_ratio if l.cls == ENTRY
                                else internal_ratios[turn])

    # renormalize rows where some turns are missing (not the case on the
    # full grid, but keeps the generator safe under parameter overrides)
    rows = {}
    for (i, j), r in r_map.items():
        rows.setdefault(i, []).append((i, j))
    for i, keys in rows.items():
        s = sum(r_map[k] for k in keys)
        if abs(s - 1.0) > 1e-12:
            for k in keys:
                r_map[k] = r_map[k] / s

    # standard four-phase scheme per node:
    # 0: NS through+right, 1: NS left, 2: EW through+right, 3: EW left
    phases_by_node = {}
    for node in nodes:
        groups = [[], [], [], []]
        for (i, j) in movements:
            l = links[[x.id for x in links].index(i)]
            if l.end != node:
                continue
            axis_ns = heading[i] in ("N", "S")
            turn = turn_of[(i, j)]
            if axis_ns:
                groups[1 if turn == "left" else 0].append((i, j))
            else:
                groups[3 if turn == "left" else 2].append((i, j))
        phases_by_node[node] = groups
    return Network(links, movements, c_map, r_map, phases_by_node)


# ---------------------------------------------------------------------------
# JSON network config
# ---------------------------------------------------------------------------

def network_to_config(net: Network) -> dict:
    """JSON-compatible description of a network (inverse of
    network_from_config)."""
    phases = []
    for ph in net.phases:
        phases.append({
            "node": ph.node,
            "served": [[net.movements[q].from_link, net.movements[q].to_link]
                       for q in ph.served],
        })
    return {
        "links": [{"id": l.id, "class": l.cls, "start": l.start, "end": l.end}
                  for l in net.links],
        "movements": [{"from": m.from_link, "to": m.to_link,
                       "C": net.C[m.index], "R": net.R[m.index]}
                      for m in net.movements],
        "phases": phases,
    }


def network_from_config(cfg: Mapping) -> Network:
    required = {"links", "movements", "phases"}
    unknown = set(cfg) - required - {"demand_bounds"}
    if unknown:
        raise NetworkError(f"unknown network config keys: {sorted(unknown)}")
    missing = required - set(cfg)
    if missing:
        raise NetworkError(f"network config missing keys: {sorted(missing)}")
    links = [Link(str(d["id"]), d["class"], d.get("start"), d.get("end"))
             for d in cfg["links"]]
    movements, c_map, r_map = [], {}, {}
    for d in cfg["movements"]:
        key = (str(d["from"]), str(d["to"]))
        movements.append(key)
        c_map[key] = float(d["C"])
        r_map[key] = float(d["R"])
    phases_by_node = {}
    for d in cfg["phases"]:
        phases_by_node.setdefault(str(d["node"]), []).append(
            [(str(a), str(b)) for a, b in d["served"]])
    return Network(links, movements, c_map, r_map, phases_by_node)


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_config(json.load(fh))


def save_network(net: Network, path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_config(net), fh, indent=2)
