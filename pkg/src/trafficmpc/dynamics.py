"""Piecewise-affine queue dynamics and the interval-bounding recursions.

Queue lengths are a fluid model (nonnegative reals, no storage ceiling).
Exit links report the volume that arrived during the step plus a cumulative
counter; they do not store a queue.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bounds import ParameterBounds
from .network import Network, NetworkError


@dataclass
class QueueState:
    """Per-movement queue vector plus per-exit-link arrival volumes."""
    x: np.ndarray
    exit_volume: np.ndarray  # arrivals at each exit link during the last step
    cumulative_exit: np.ndarray

    @classmethod
    def initial(cls, net: Network, x0) -> "QueueState":
        x = np.asarray(x0, dtype=float)
        if x.shape == ():
            x = np.full(net.n_x, float(x0))
        if x.shape != (net.n_x,):
            raise NetworkError(
                f"state has shape {x.shape}, expected ({net.n_x},)")
        if np.any(x < 0):
            raise NetworkError("initial queue lengths must be nonnegative")
        n_exit = len(net.exit_links)
        return cls(x.copy(), np.zeros(n_exit), np.zeros(n_exit))


def demand_vector(net: Network, value) -> np.ndarray:
    """Demand per entry link, ordered as net.entry_links.  Accepts a scalar,
    a vector, or a dict keyed by entry-link id."""
    if isinstance(value, dict):
        lam = np.array([float(value[l]) for l in net.entry_links])
    else:
        lam = np.asarray(value, dtype=float)
        if lam.shape == ():
            lam = np.full(len(net.entry_links), float(value))
    if lam.shape != (len(net.entry_links),):
        raise NetworkError(
            f"demand has shape {lam.shape}, expected ({len(net.entry_links)},)")
    if np.any(lam < 0):
        raise NetworkError("demand must be nonnegative")
    return lam


def _advance(net: Network, x, S, lam, c_out, c_in, r):
    """Shared kernel: one step with service rates c_out on the outflow max
    term and c_in inside the inflow min term."""
    out = np.maximum(x - c_out * S, 0.0)
    served = np.minimum(c_in * S, x)
    arrivals = net._arrival @ served  # per link
    inflow = np.where(net.entry_mask,
                      r * lam[np.maximum(net.entry_pos_of_movement, 0)],
                      r * arrivals[net.from_link])
    return out + inflow, arrivals


def step(net: Network, state: QueueState, u, lam) -> QueueState:
    """Plant dynamics: one step under the true parameters."""
    u = net.check_control(u)
    lam = demand_vector(net, lam)
    S = net.signal(u)
    x_next, arrivals = _advance(net, state.x, S, lam, net.C, net.C, net.R)
    vol = arrivals[net.exit_link_idx]
    return QueueState(x_next, vol, state.cumulative_exit + vol)


def augmented_step_upper(net: Network, bounds: ParameterBounds,
                         state: QueueState, u, lam_hi=None) -> QueueState:
    """Upper bounding recursion: slowest admissible outflow (C_lo), fastest
    admissible inflow (C_hi, R_hi, lam_hi)."""
    u = net.check_control(u)
    lam = demand_vector(net, bounds.lam_hi if lam_hi is None else lam_hi)
    S = net.signal(u)
    x_next, arrivals = _advance(net, state.x, S, lam,
                                bounds.c_lo, bounds.c_hi, bounds.r_hi)
    vol = arrivals[net.exit_link_idx]
    return QueueState(x_next, vol, state.cumulative_exit + vol)


def augmented_step_lower(net: Network, bounds: ParameterBounds,
                         state: QueueState, u, lam_lo=None) -> QueueState:
    """Lower bounding recursion: roles of the interval endpoints swapped."""
    u = net.check_control(u)
    lam = demand_vector(net, bounds.lam_lo if lam_lo is None else lam_lo)
    S = net.signal(u)
    x_next, arrivals = _advance(net, state.x, S, lam,
                                bounds.c_hi, bounds.c_lo, bounds.r_lo)
    vol = arrivals[net.exit_link_idx]
    return QueueState(x_next, vol, state.cumulative_exit + vol)


def next_queues(net: Network, x, u, lam) -> np.ndarray:
    """Next per-movement queue vector only (no exit bookkeeping, no control
    revalidation).  Used by controllers and analysis inner loops."""
    S = net.signal(u)
    x_next, _ = _advance(net, x, S, np.asarray(lam, dtype=float),
                         net.C, net.C, net.R)
    return x_next
