"""Small dense linear programming over simplex-constrained variables.

A two-phase tableau simplex sized for the per-intersection problems in this
package (a handful of variables, tens of constraints).  Pivoting starts with
Dantzig's rule and falls back to Bland's rule after an iteration threshold,
so the solver always terminates; ties are broken by lowest index, which makes
the returned vertex deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

TOL = 1e-9


class LPError(RuntimeError):
    pass


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    z: Optional[np.ndarray]
    value: Optional[float]


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]
    basis[row] = col


def _run_simplex(T, basis, cost):
    """Maximize cost over the tableau T (rows = B^-1 A | B^-1 b).

    Returns "optimal" or "unbounded"; T and basis are updated in place.
    """
    m, ncols = T.shape
    n = ncols - 1
    bland_after = 50 * (m + n)
    it = 0
    while True:
        reduced = cost[:n] - cost[basis] @ T[:, :n]
        if it <= bland_after:
            col = int(np.argmax(reduced))
            if reduced[col] <= TOL:
                return "optimal"
        else:  # Bland: first improving column
            pos = np.nonzero(reduced > TOL)[0]
            if pos.size == 0:
                return "optimal"
            col = int(pos[0])
        ratios = np.full(m, np.inf)
        ok = T[:, col] > TOL
        ratios[ok] = T[ok, -1] / T[ok, col]
        row = int(np.argmin(ratios))
        if not np.isfinite(ratios[row]):
            return "unbounded"
        # lowest-index tie break on the leaving variable
        ties = np.nonzero(ratios <= ratios[row] + TOL * (1 + abs(ratios[row])))[0]
        if ties.size > 1:
            row = int(ties[np.argmin(np.asarray(basis)[ties])])
        _pivot(T, basis, row, col)
        it += 1


def _solve_standard(c, A, b):
    """max c.z  s.t.  A z = b, z >= 0  (two-phase)."""
    A = np.asarray(A, dtype=float).copy()
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # phase 1: artificials
    T = np.hstack([A, np.eye(m), b[:, None]])
    basis = list(range(n, n + m))
    cost1 = np.concatenate([np.zeros(n), -np.ones(m), [0.0]])
    status = _run_simplex(T, basis, cost1)
    assert status == "optimal"  # phase 1 is always bounded
    phase1_val = cost1[basis] @ T[:, -1]
    if phase1_val < -1e-7:
        return LPResult("infeasible", None, None)
    # drive remaining artificials out of the basis
    for r in range(m):
        if basis[r] >= n:
            cols = np.nonzero(np.abs(T[r, :n]) > TOL)[0]
            if cols.size:
                _pivot(T, basis, r, int(cols[0]))
    keep = [r for r in range(m) if basis[r] < n]
    T = np.hstack([T[keep][:, :n], T[keep][:, -1:]])
    basis = [basis[r] for r in keep]

    cost2 = np.concatenate([c, [0.0]])
    status = _run_simplex(T, basis, cost2)
    if status == "unbounded":
        return LPResult("unbounded", None, None)
    z = np.zeros(n)
    z[basis] = T[:, -1]
    return LPResult("optimal", z, float(c @ z))


def lp_solve(c, a_ub, b_ub, simplex_groups: Sequence[int], n_extra: int = 0):
    """Maximize c.z subject to a_ub z <= b_ub over a simplex-product domain.

    The variable vector z is the concatenation of one block per entry of
    simplex_groups (each block nonnegative, summing to 1) followed by
    n_extra free-standing nonnegative variables.
    """
    sizes = list(simplex_groups)
    n = sum(sizes) + n_extra
    c = np.asarray(c, dtype=float)
    if c.shape != (n,):
        raise LPError(f"objective has shape {c.shape}, expected ({n},)")
    a_ub = np.asarray(a_ub, dtype=float).reshape(-1, n) if len(a_ub) else \
        np.zeros((0, n))
    b_ub = np.asarray(b_ub, dtype=float)

    m_ub = a_ub.shape[0]
    n_eq = len(sizes)
    # standard form: [z, slacks]
    A = np.zeros((m_ub + n_eq, n + m_ub))
    bvec = np.zeros(m_ub + n_eq)
    A[:m_ub, :n] = a_ub
    A[:m_ub, n:] = np.eye(m_ub)
    bvec[:m_ub] = b_ub
    off = 0
    for g, size in enumerate(sizes):
        A[m_ub + g, off:off + size] = 1.0
        bvec[m_ub + g] = 1.0
        off += size
    res = _solve_standard(np.concatenate([c, np.zeros(m_ub)]), A, bvec)
    if res.status != "optimal":
        return res
    z = res.z[:n]
    return LPResult("optimal", z, float(c @ z))
