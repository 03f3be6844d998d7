"""Interval bounds on saturation rates, turn ratios, and demand.

Bounds start as intervals known to contain the true parameters and collapse
to point estimates as identification proceeds.  Intervals only shrink.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .network import Network


class BoundsError(ValueError):
    pass


@dataclass
class ParameterBounds:
    c_hi: np.ndarray  # per movement
    c_lo: np.ndarray
    r_hi: np.ndarray  # per movement (entry rows carried but never collapsed)
    r_lo: np.ndarray
    lam_hi: np.ndarray  # per entry link
    lam_lo: np.ndarray

    def copy(self) -> "ParameterBounds":
        return ParameterBounds(self.c_hi.copy(), self.c_lo.copy(),
                               self.r_hi.copy(), self.r_lo.copy(),
                               self.lam_hi.copy(), self.lam_lo.copy())

    def c_collapsed(self, q: int) -> bool:
        return self.c_hi[q] == self.c_lo[q]

    def r_collapsed(self, q: int) -> bool:
        return self.r_hi[q] == self.r_lo[q]

    def collapse_c(self, q: int, value: float) -> None:
        if not (self.c_lo[q] - 1e-9 <= value <= self.c_hi[q] + 1e-9):
            raise BoundsError(
                f"estimate {value} outside C interval"
                f" [{self.c_lo[q]}, {self.c_hi[q]}] for movement {q}")
        self.c_hi[q] = self.c_lo[q] = value

    def collapse_r(self, q: int, value: float) -> None:
        if not (self.r_lo[q] - 1e-9 <= value <= self.r_hi[q] + 1e-9):
            raise BoundsError(
                f"estimate {value} outside R interval"
                f" [{self.r_lo[q]}, {self.r_hi[q]}] for movement {q}")
        self.r_hi[q] = self.r_lo[q] = value

    def validate(self, net: Network):
        """Check the standing assumptions on the intervals; returns a list of
        violation strings."""
        report = []
        for q in range(net.n_x):
            if not (0 < self.c_lo[q] <= self.c_hi[q]):
                report.append(f"C bounds invalid for {net.movement_label(q)}")
            if not (0 < self.r_lo[q] <= self.r_hi[q]):
                report.append(f"R bounds invalid for {net.movement_label(q)}")
        for k, lid in enumerate(net.entry_links):
            if not (0 <= self.lam_lo[k] <= self.lam_hi[k]):
                report.append(f"demand bounds invalid for entry link {lid}")
        # entry service must dominate worst-case entry inflow
        ent = np.nonzero(net.entry_mask)[0]
        lam = self.lam_hi[net.entry_pos_of_movement[ent]]
        bad = self.r_hi[ent] * lam >= self.c_lo[ent]
        for q in ent[bad]:
            report.append(
                f"R_hi*lam_hi >= C_lo for entry movement {net.movement_label(q)}")
        return report


def bounds_from_truth(net: Network, lam, delta: float = 0.1) -> ParameterBounds:
    """Truth +/- delta intervals (clipped away from zero), the setup used for
    the identification experiments."""
    lam = np.asarray(lam, dtype=float)
    eps = 1e-6
    c_lo = np.maximum(net.C - delta, eps)
    r_lo = np.maximum(net.R - delta, eps)
    return ParameterBounds(
        c_hi=net.C + delta, c_lo=c_lo,
        r_hi=np.minimum(net.R + delta, 1.0), r_lo=r_lo,
        lam_hi=lam + delta, lam_lo=np.maximum(lam - delta, 0.0))


def collapsed_bounds(net: Network, lam) -> ParameterBounds:
    """Point bounds equal to the true parameters (nothing to identify)."""
    lam = np.asarray(lam, dtype=float)
    return ParameterBounds(net.C.copy(), net.C.copy(),
                           net.R.copy(), net.R.copy(),
                           lam.copy(), lam.copy())


def bounds_to_config(net: Network, b: ParameterBounds) -> dict:
    return {
        "C": {net.movement_label(q): [b.c_lo[q], b.c_hi[q]]
              for q in range(net.n_x)},
        "R": {net.movement_label(q): [b.r_lo[q], b.r_hi[q]]
              for q in range(net.n_x)},
        "lambda": {lid: [b.lam_lo[k], b.lam_hi[k]]
                   for k, lid in enumerate(net.entry_links)},
    }


def bounds_from_config(net: Network, cfg) -> ParameterBounds:
    unknown = set(cfg) - {"C", "R", "lambda"}
    if unknown:
        raise BoundsError(f"unknown bounds config keys: {sorted(unknown)}")
    n = net.n_x
    b = ParameterBounds(np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n),
                        np.zeros(len(net.entry_links)),
                        np.zeros(len(net.entry_links)))
    for label, (lo, hi) in cfg["C"].items():
        f, t = label.split("->")
        q = net.movement_index[(f, t)]
        b.c_lo[q], b.c_hi[q] = float(lo), float(hi)
    for label, (lo, hi) in cfg["R"].items():
        f, t = label.split("->")
        q = net.movement_index[(f, t)]
        b.r_lo[q], b.r_hi[q] = float(lo), float(hi)
    for lid, (lo, hi) in cfg["lambda"].items():
        k = net.entry_links.index(str(lid))
        b.lam_lo[k], b.lam_hi[k] = float(lo), float(hi)
    return b


def load_bounds(net: Network, path) -> ParameterBounds:
    with open(path) as fh:
        return bounds_from_config(net, json.load(fh))


def save_bounds(net: Network, b: ParameterBounds, path) -> None:
    with open(path, "w") as fh:
        json.dump(bounds_to_config(net, b), fh, indent=2)
