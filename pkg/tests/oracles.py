"""Independent reference computations shared by unit and acceptance tests."""

from itertools import combinations

import numpy as np

from gridtrack import lp


def random_lp(rng, max_vars=8, max_rows=8, eq_prob=0.15):
    """A small LP with finite bounds; roughly one in ten is infeasible."""
    n = int(rng.integers(1, max_vars + 1))
    m = int(rng.integers(1, max_rows + 1))
    A = np.round(rng.uniform(-5, 5, (m, n)), 1)
    c = np.round(rng.uniform(-5, 5, n), 1)
    lb = np.round(rng.uniform(-3, 0, n), 1)
    ub = lb + np.round(rng.uniform(0.5, 4, n), 1)
    x0 = rng.uniform(lb, ub)
    senses = []
    b = np.empty(m)
    for i in range(m):
        u = rng.uniform()
        act = A[i] @ x0
        if u < eq_prob:
            senses.append(lp.EQ)
            b[i] = act
        elif u < 0.55:
            senses.append(lp.LE)
            b[i] = act + rng.uniform(-1.5, 3)
        else:
            senses.append(lp.GE)
            b[i] = act - rng.uniform(-1.5, 3)
    return lp.StandardFormLp(c, A, b, senses, lb, ub)


def vertex_enumeration(prob):
    """Optimum of an LP with finite bounds by checking every basic solution.

    Returns ``(objective, x)`` or ``(None, None)`` when infeasible. A basic
    solution makes some rows ``S`` active, frees as many variables ``F``, and
    holds every other variable at one of its bounds; for each ``(S, F)`` the
    square system is solved once for all bound patterns.
    """
    n, m = prob.n_vars, prob.n_rows
    A, b = prob.A, prob.b
    lb, ub = prob.lb, prob.ub
    if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
        raise ValueError("vertex enumeration needs finite bounds")
    senses = np.array(prob.senses)

    def feasible(X):
        act = X @ A.T
        ok = np.all((X >= lb - 1e-9) & (X <= ub + 1e-9), axis=-1)
        tol = 1e-7 * (1 + np.abs(b))
        ok &= np.all(np.where(senses == lp.LE, act <= b + tol, True), axis=-1)
        ok &= np.all(np.where(senses == lp.GE, act >= b - tol, True), axis=-1)
        ok &= np.all(np.where(senses == lp.EQ, np.abs(act - b) <= tol, True), axis=-1)
        return ok

    best, arg = None, None
    # equalities are enforced by the feasibility check, so any row may be in S
    for s in range(min(n, m) + 1):
        picks = list(combinations(range(m), s))
        rows = np.array(picks, dtype=int).reshape(len(picks), s)
        subsets = list(combinations(range(n), s))
        cols = np.array(subsets, dtype=int).reshape(len(subsets), s)
        R = np.repeat(rows, cols.shape[0], axis=0)
        C = np.tile(cols, (rows.shape[0], 1))
        P = R.shape[0]
        free = np.zeros((P, n), dtype=bool)
        free[np.arange(P)[:, None], C] = True
        # every lb/ub pattern over the fixed variables, as a (T, n) 0/1 mask
        T = 2 ** (n - s)
        bits = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
        X = np.empty((P, T, n))
        for i in range(P):
            fixed = np.flatnonzero(~free[i])
            pat = bits[:T, : fixed.size]
            X[i] = 0.0
            X[i][:, fixed] = np.where(pat == 1, ub[fixed], lb[fixed])
        if s > 0:
            M = A[R[:, :, None], C[:, None, :]]
            ok = np.abs(np.linalg.det(M)) > 1e-10
            if not ok.any():
                continue
            R, C, X, M = R[ok], C[ok], X[ok], M[ok]
            rhs = b[R][:, :, None] - np.einsum("psn,ptn->pst", A[R], X)
            sol = np.linalg.solve(M, rhs)
            np.put_along_axis(X, np.broadcast_to(C[:, None, :], X.shape[:2] + (s,)), sol.transpose(0, 2, 1), axis=2)
        X = X.reshape(-1, n)
        feas = feasible(X)
        if not feas.any():
            continue
        vals = X[feas] @ prob.c
        i = int(np.argmin(vals))
        if best is None or vals[i] < best:
            best, arg = float(vals[i]), X[feas][i]
    return best, arg


def soc_after(soc, p_kw, e_kwh, dt_s=30.0):
    """SoC after a sequence of constant-power steps (injection positive)."""
    return soc - np.cumsum(p_kw) * dt_s / 3600.0 / e_kwh
