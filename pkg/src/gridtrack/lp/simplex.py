"""Two-phase primal simplex on a dense bounded-variable tableau.

The LP is brought to ``A' x' = b'``, ``0 <= x' <= u'``, ``b' >= 0`` and
solved from a slack/artificial starting basis. Pivoting runs in the
compiled kernel when it is importable and in the numpy twin otherwise.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernel_py
from .problem import (
    EQ,
    GE,
    INFEASIBLE,
    ITERATION_LIMIT,
    LE,
    OPTIMAL,
    UNBOUNDED,
    LpOptions,
    LpResult,
    StandardFormLp,
)

_kernel_c = None
if not os.environ.get("GRIDTRACK_PURE_PYTHON"):
    try:
        from . import _kernel as _kernel_c  # type: ignore[no-redef]
    except ImportError:  # pragma: no cover - depends on the build
        _kernel_c = None

KERNEL = "cython" if _kernel_c is not None else "python"

_RULES = {"bland": _kernel_py.RULE_BLAND, "dantzig": _kernel_py.RULE_DANTZIG}

# pivots between tableau refactorizations
REFACTOR_EVERY = 250


def kernel_available() -> bool:
    return _kernel_c is not None


def _run(kernel, *args):
    mod = _kernel_c if kernel == "cython" else _kernel_py
    if mod is None:
        raise RuntimeError("compiled simplex kernel is not built")
    return mod.run_simplex(*args)


class _Standardized:
    """Variable substitution ``x = offset + M @ x'`` with ``0 <= x' <= u'``."""

    def __init__(self, lp: StandardFormLp):
        n = lp.n_vars
        cols = []  # (original var, sign, upper)
        offset = np.zeros(n)
        for j in range(n):
            lo, hi = lp.lb[j], lp.ub[j]
            lo_inf, hi_inf = np.isinf(lo), np.isinf(hi)
            if lo_inf and hi_inf:
                cols += [(j, 1.0, np.inf), (j, -1.0, np.inf)]
            elif lo_inf:
                offset[j] = hi
                cols.append((j, -1.0, np.inf))
            elif hi_inf:
                offset[j] = lo
                cols.append((j, 1.0, np.inf))
            elif lo < 0.0 < hi:
                cols += [(j, 1.0, hi), (j, -1.0, -lo)]
            elif hi <= 0.0:
                offset[j] = hi
                cols.append((j, -1.0, hi - lo))
            else:
                offset[j] = lo
                cols.append((j, 1.0, hi - lo))
        self.offset = offset
        self.var = np.array([c[0] for c in cols], dtype=np.int64)
        self.sign = np.array([c[1] for c in cols])
        self.upper = np.array([c[2] for c in cols])

    def expand(self, lp: StandardFormLp):
        A = lp.A[:, self.var] * self.sign
        c = lp.c[self.var] * self.sign
        b = lp.b - lp.A @ self.offset
        const = float(lp.c @ self.offset)
        return A, b, c, const

    def recover(self, xs: np.ndarray, n: int) -> np.ndarray:
        x = self.offset.copy()
        np.add.at(x, self.var, self.sign * xs)
        return x


def solve_lp(lp: StandardFormLp, options: LpOptions | None = None, kernel: str | None = None) -> LpResult:
    """Solve ``lp`` to an optimal basic solution.

    Parameters
    ----------
    lp : StandardFormLp
    options : LpOptions, optional
        Tolerances, iteration cap (default ``10 * (rows + cols)`` per phase)
        and pricing rule (``"bland"`` or ``"dantzig"``; the latter falls back
        to Bland's rule after a run of degenerate pivots).
    kernel : {"cython", "python"}, optional
        Force an iteration kernel; defaults to the compiled one if present.

    Returns
    -------
    LpResult
        ``status`` is one of optimal, infeasible, unbounded, iteration-limit.
        On iteration limit ``x`` is the last iterate (feasible if phase 1
        had finished).
    """
    opts = options or LpOptions()
    kernel = kernel or KERNEL
    rule = _RULES[opts.rule]
    n, m = lp.n_vars, lp.n_rows

    std = _Standardized(lp)
    A, b, c, const = std.expand(lp)
    ns = A.shape[1]

    # equilibrate rows to unit max coefficient
    rmax = np.max(np.abs(A), axis=1) if ns else np.zeros(m)
    row_scale = np.where(rmax > 0.0, 1.0 / np.where(rmax > 0.0, rmax, 1.0), 1.0)
    A = A * row_scale[:, None]
    b = b * row_scale

    # slack columns
    slack_sign = np.array([1.0 if s == LE else (-1.0 if s == GE else 0.0) for s in lp.senses])
    row_sign = np.where(b < 0.0, -1.0, 1.0)
    A = A * row_sign[:, None]
    b = b * row_sign
    slack_cols = np.flatnonzero(slack_sign != 0.0)
    n_slack = slack_cols.size
    S = np.zeros((m, n_slack))
    S[slack_cols, np.arange(n_slack)] = slack_sign[slack_cols] * row_sign[slack_cols]
    slack_of_row = -np.ones(m, dtype=np.int64)
    slack_of_row[slack_cols] = ns + np.arange(n_slack)

    needs_art = np.array([slack_of_row[i] < 0 or S[i, slack_of_row[i] - ns] < 0 for i in range(m)], dtype=bool)
    art_rows = np.flatnonzero(needs_art)
    n_art = art_rows.size
    R = np.zeros((m, n_art))
    R[art_rows, np.arange(n_art)] = 1.0

    N = ns + n_slack + n_art
    T0 = np.ascontiguousarray(np.hstack([A, S, R]))
    T = T0.copy()
    upper = np.concatenate([std.upper, np.full(n_slack, np.inf), np.full(n_art, np.inf)])
    basis = np.empty(m, dtype=np.int64)
    for i in range(m):
        basis[i] = slack_of_row[i] if not needs_art[i] else 0
    basis[art_rows] = ns + n_slack + np.arange(n_art)
    pos = -np.ones(N, dtype=np.int64)
    pos[basis] = np.arange(m)
    at_upper = np.zeros(N, dtype=np.int8)
    xB = b.copy()
    art_start = ns + n_slack

    max_iter = opts.max_iter if opts.max_iter is not None else 10 * (m + N)
    total_iter = 0

    if n_art:
        cost1 = np.zeros(N)
        cost1[art_start:] = 1.0
        d = cost1 - cost1[basis] @ T
        status, it = _iterate(kernel, T0, b, T, xB, d, basis, pos, at_upper, upper, cost1, max_iter, rule, opts)
        total_iter += it
        infeas = float(np.sum(xB[basis >= art_start]))
        if status == _kernel_py.STATUS_ITERATION_LIMIT:
            xs = _primal(xB, basis, at_upper, upper, N)
            return LpResult(ITERATION_LIMIT, std.recover(xs[:ns], n), np.nan, iterations=total_iter, backend=kernel)
        if infeas > opts.feas_tol:
            xs = _primal(xB, basis, at_upper, upper, N)
            return LpResult(INFEASIBLE, std.recover(xs[:ns], n), np.nan, iterations=total_iter, backend=kernel)
        _drive_out_artificials(T, xB, basis, pos, at_upper, upper, art_start, opts.pivot_tol)
        upper[art_start:] = 0.0

    cost2 = np.zeros(N)
    cost2[:ns] = c
    d = cost2 - cost2[basis] @ T
    status, it = _iterate(kernel, T0, b, T, xB, d, basis, pos, at_upper, upper, cost2, max_iter, rule, opts)
    total_iter += it
    xs = _primal(xB, basis, at_upper, upper, N)
    x = std.recover(xs[:ns], n)
    if status == _kernel_py.STATUS_UNBOUNDED:
        return LpResult(UNBOUNDED, x, -np.inf, iterations=total_iter, backend=kernel)
    obj = float(lp.c @ x)
    if status == _kernel_py.STATUS_ITERATION_LIMIT:
        return LpResult(ITERATION_LIMIT, x, obj, iterations=total_iter, backend=kernel)

    # row duals from B^T y = c_B on the sign-normalised rows
    Bmat = T0[:, basis]
    try:
        y = np.linalg.solve(Bmat.T, cost2[basis])
    except np.linalg.LinAlgError:  # pragma: no cover - basis is nonsingular by construction
        y = np.linalg.lstsq(Bmat.T, cost2[basis], rcond=None)[0]
    duals = y * row_sign * row_scale
    reduced = lp.c - lp.A.T @ duals
    return LpResult(OPTIMAL, x, obj, duals=duals, reduced_costs=reduced, iterations=total_iter, backend=kernel)


def _refactor(T0, b, T, xB, d, basis, at_upper, upper, cost):
    """Rebuild ``T = B^-1 A``, ``xB`` and ``d`` in place from the original data."""
    B = T0[:, basis]
    try:
        lu = np.linalg.solve(B, np.column_stack([T0, b]))
    except np.linalg.LinAlgError:  # pragma: no cover - keep the updated tableau
        return
    T[:, :] = lu[:, :-1]
    up = np.flatnonzero((at_upper == 1) & np.isfinite(upper))
    xB[:] = lu[:, -1] - T[:, up] @ upper[up]
    if d is not None:
        d[:] = cost - cost[basis] @ T


def _verified(T0, b, xB, d, basis, pos, at_upper, upper, cost, opts) -> bool:
    """Recompute primal values and reduced costs from the basis; True if still optimal.

    On success ``xB`` and ``d`` are replaced by the recomputed values.
    """
    B = T0[:, basis]
    try:
        y = np.linalg.solve(B.T, cost[basis])
        up = np.flatnonzero((at_upper == 1) & np.isfinite(upper))
        xb = np.linalg.solve(B, b - T0[:, up] @ upper[up])
    except np.linalg.LinAlgError:
        return False
    dd = cost - y @ T0
    nonbasic = pos < 0
    bad = nonbasic & (upper > 0.0) & (((at_upper == 0) & (dd < -opts.dual_tol)) | ((at_upper == 1) & (dd > opts.dual_tol)))
    if bad.any():
        return False
    if np.max(np.abs(xb - xB), initial=0.0) > 1e-9 * (1.0 + np.max(np.abs(xb), initial=0.0)):
        return False
    xB[:] = xb
    d[:] = dd
    return True


def _objective(xB, basis, at_upper, upper, cost):
    up = (at_upper == 1) & np.isfinite(upper)
    return float(cost[basis] @ xB + cost[up] @ upper[up])


def _iterate(kernel, T0, b, T, xB, d, basis, pos, at_upper, upper, cost, max_iter, rule, opts):
    """Run the kernel in chunks, refactorizing between chunks and at optimality.

    A chunk without objective progress switches to Bland's rule for the rest
    of the phase, which keeps the anti-cycling guarantee.
    """
    total = 0
    checks = 0
    while True:
        budget = min(REFACTOR_EVERY, max_iter - total)
        if budget <= 0:
            return _kernel_py.STATUS_ITERATION_LIMIT, total
        before = _objective(xB, basis, at_upper, upper, cost)
        status, it = _run(kernel, T, xB, d, basis, pos, at_upper, upper, budget, rule, opts.dual_tol, opts.pivot_tol)
        total += it
        if status == _kernel_py.STATUS_UNBOUNDED:
            return status, total
        if status == _kernel_py.STATUS_OPTIMAL:
            checks += 1
            if _verified(T0, b, xB, d, basis, pos, at_upper, upper, cost, opts) or checks > 3:
                return status, total
            _refactor(T0, b, T, xB, d, basis, at_upper, upper, cost)
            continue
        _refactor(T0, b, T, xB, d, basis, at_upper, upper, cost)
        if _objective(xB, basis, at_upper, upper, cost) >= before - 1e-12 * (1.0 + abs(before)):
            rule = _kernel_py.RULE_BLAND


def _primal(xB, basis, at_upper, upper, N):
    xs = np.where(at_upper.astype(bool), upper, 0.0)
    xs[~np.isfinite(xs)] = 0.0
    xs[basis] = xB
    return xs


def _drive_out_artificials(T, xB, basis, pos, at_upper, upper, art_start, pivot_tol):
    """Replace zero-valued basic artificials by structural columns where possible."""
    m = T.shape[0]
    for r in range(m):
        if basis[r] < art_start:
            continue
        row = T[r, :art_start]
        cand = np.flatnonzero((np.abs(row) > pivot_tol) & (pos[:art_start] < 0))
        if cand.size == 0:
            continue  # redundant row; artificial stays basic at zero
        j = int(cand[0])
        val = upper[j] if at_upper[j] else 0.0
        leaving = int(basis[r])
        T[r, :] /= T[r, j]
        colj = T[:, j].copy()
        colj[r] = 0.0
        T -= np.outer(colj, T[r, :])
        xB[r] = val
        basis[r] = j
        pos[j] = r
        pos[leaving] = -1
        at_upper[leaving] = 0
        at_upper[j] = 0
