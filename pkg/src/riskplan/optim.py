"""Small dense optimisation kernels: a two-phase tableau simplex and the
Euclidean projection onto the probability simplex.

The LPs met in controller improvement have a few hundred rows and a few
thousand columns, which a dense tableau handles comfortably. Pivoting uses
the most negative reduced cost and switches to Bland's rule after a run of
degenerate pivots, which rules out cycling.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

__all__ = ["LpResult", "linprog_simplex", "project_simplex", "project_simplex_blocks"]

_PIVOT_TOL = 1e-11
_FEAS_TOL = 1e-9


class LpResult(NamedTuple):
    x: np.ndarray
    fun: float
    status: str  # "optimal" | "infeasible" | "unbounded" | "iteration_limit"
    iterations: int


def _run_simplex(tab, basis, n_enter, max_iter, degenerate_switch):
    """Minimise the objective in the last row of ``tab`` in place.

    Only the first ``n_enter`` columns may enter the basis. Returns
    (status, pivots).
    """
    m = tab.shape[0] - 1
    bland = False
    degenerate_run = 0
    for it in range(max_iter):
        red = tab[-1, :n_enter]
        if bland:
            cand = np.flatnonzero(red < -_FEAS_TOL)
            if cand.size == 0:
                return "optimal", it
            j = int(cand[0])
        else:
            j = int(np.argmin(red))
            if red[j] >= -_FEAS_TOL:
                return "optimal", it
        col = tab[:m, j]
        pos = col > _PIVOT_TOL
        if not pos.any():
            return "unbounded", it
        rhs = tab[:m, -1]
        ratios = np.full(m, np.inf)
        ratios[pos] = rhs[pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
        # Bland's leaving rule: among ties, the smallest basic variable index
        i = int(ties[np.argmin(basis[ties])])
        if best <= _FEAS_TOL:
            degenerate_run += 1
            if degenerate_run >= degenerate_switch:
                bland = True
        else:
            degenerate_run = 0
        _pivot(tab, i, j)
        basis[i] = j
    return "iteration_limit", max_iter


def _pivot(tab, i, j):
    tab[i] /= tab[i, j]
    col = tab[:, j].copy()
    col[i] = 0.0
    nz = np.flatnonzero(col)
    if nz.size:
        tab[nz] -= np.outer(col[nz], tab[i])


def linprog_simplex(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, free=None,
                    max_iter=50_000, degenerate_switch=50):
    """Minimise ``c @ x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``.

    Variables are nonnegative unless flagged in the boolean mask ``free``;
    free variables are split into a difference of two nonnegative parts.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    free = np.zeros(n, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    fidx = np.flatnonzero(free)

    # columns: x (n) | negative parts of free vars | slacks | artificials
    nf = fidx.size
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    A = np.zeros((m, n + nf + m_ub))
    A[:m_ub, :n] = A_ub
    A[m_ub:, :n] = A_eq
    A[:, n:n + nf] = -A[:, fidx]
    A[np.arange(m_ub), n + nf + np.arange(m_ub)] = 1.0
    b = np.concatenate([b_ub, b_eq])
    neg = b < 0
    A[neg] *= -1.0
    b = np.where(neg, -b, b)
    cost = np.concatenate([c, -c[fidx], np.zeros(m_ub)])
    n_struct = A.shape[1]

    # slack columns can start basic on rows that were not negated
    basis = np.full(m, -1)
    slack_rows = np.flatnonzero(~neg[:m_ub])
    basis[slack_rows] = n + nf + slack_rows
    art_rows = np.flatnonzero(basis < 0)
    n_art = art_rows.size

    tab = np.zeros((m + 1, n_struct + n_art + 1))
    tab[:m, :n_struct] = A
    tab[art_rows, n_struct + np.arange(n_art)] = 1.0
    tab[:m, -1] = b
    basis[art_rows] = n_struct + np.arange(n_art)
    total = 0

    if n_art:
        tab[-1, n_struct:n_struct + n_art] = 1.0
        tab[-1] -= tab[art_rows].sum(axis=0)
        status, it = _run_simplex(tab, basis, n_struct + n_art, max_iter, degenerate_switch)
        total += it
        if status == "iteration_limit":
            return LpResult(np.full(n, np.nan), np.nan, status, total)
        if -tab[-1, -1] > _FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
            return LpResult(np.full(n, np.nan), np.nan, "infeasible", total)
        # drive remaining zero-level artificials out of the basis
        keep = np.ones(m, dtype=bool)
        for i in np.flatnonzero(basis >= n_struct):
            row = tab[i, :n_struct]
            cand = np.flatnonzero(np.abs(row) > 1e-9)
            if cand.size:
                _pivot(tab, i, int(cand[0]))
                basis[i] = int(cand[0])
            else:
                keep[i] = False
        tab = np.vstack([tab[:m][keep], tab[-1:]])
        basis = basis[keep]
        tab = np.delete(tab, np.s_[n_struct:n_struct + n_art], axis=1)
        m = basis.size

    tab[-1] = 0.0
    tab[-1, :n_struct] = cost
    cb = cost[basis]
    tab[-1] -= cb @ tab[:m]
    status, it = _run_simplex(tab, basis, n_struct, max_iter - total, degenerate_switch)
    total += it
    z = np.zeros(n_struct)
    z[basis] = tab[:m, -1]
    x = z[:n].copy()
    x[fidx] -= z[n:n + nf]
    if status != "optimal":
        return LpResult(x, np.nan, status, total)
    return LpResult(x, float(c @ x), status, total)


def project_simplex(v, radius=1.0):
    """Euclidean projection of ``v`` onto {x >= 0, sum(x) = radius}.

    Works row-wise on 2-D input (sort-based, O(n log n) per row).
    """
    v = np.asarray(v, dtype=float)
    flat = v.ndim == 1
    V = np.atleast_2d(v)
    n = V.shape[1]
    u = -np.sort(-V, axis=1)
    css = np.cumsum(u, axis=1) - radius
    k = np.arange(1, n + 1)
    cond = u - css / k > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(V.shape[0]), rho] / (rho + 1)
    out = np.maximum(V - theta[:, None], 0.0)
    return out[0] if flat else out


def project_simplex_blocks(x, block_size):
    """Project consecutive blocks of ``x`` onto the simplex independently."""
    x = np.asarray(x, dtype=float)
    return project_simplex(x.reshape(-1, block_size)).ravel()
