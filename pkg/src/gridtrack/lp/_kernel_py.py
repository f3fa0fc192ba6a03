"""Pure-numpy bounded-variable simplex iterations.

Mirrors ``_kernel.pyx`` operation for operation, so both produce the same
pivot sequence and bit-identical tableaux on the same input.
"""

import numpy as np

STATUS_OPTIMAL = 0
STATUS_UNBOUNDED = 1
STATUS_ITERATION_LIMIT = 2

RULE_BLAND = 0
RULE_DANTZIG = 1

TIE_TOL = 1e-12
HARRIS_TOL = 1e-9
DEGENERATE_STREAK = 50


def run_simplex(T, xB, d, basis, pos, at_upper, upper, max_iter, rule, dual_tol, pivot_tol):
    """Iterate primal simplex on a tableau in place.

    Parameters
    ----------
    T : (m, N) float64, C-contiguous
        Current tableau ``B^-1 A``.
    xB : (m,) float64
        Values of the basic variables.
    d : (N,) float64
        Reduced costs.
    basis : (m,) int64
        Column index of the basic variable in each row.
    pos : (N,) int64
        Row of each basic column, ``-1`` when nonbasic.
    at_upper : (N,) int8
        1 when a nonbasic column sits at its upper bound.
    upper : (N,) float64
        Upper bounds (lower bounds are all zero); may be ``inf``.

    Returns
    -------
    (status, iterations)
    """
    m = T.shape[0]
    streak = 0
    it = 0
    while it < max_iter:
        nonbasic = pos < 0
        cand = nonbasic & (upper > 0.0) & (
            ((at_upper == 0) & (d < -dual_tol)) | ((at_upper == 1) & (d > dual_tol))
        )
        idx = np.flatnonzero(cand)
        if idx.size == 0:
            return STATUS_OPTIMAL, it
        harris = rule == RULE_DANTZIG and streak <= DEGENERATE_STREAK
        if harris:
            j = int(idx[np.argmax(np.abs(d[idx]))])
        else:
            j = int(idx[0])
        sigma = 1.0 if at_upper[j] == 0 else -1.0

        col = T[:, j] * sigma
        ub_b = upper[basis]
        ratios = np.full(m, np.inf)
        down = col > pivot_tol
        up = (col < -pivot_tol) & np.isfinite(ub_b)
        ratios[down] = xB[down] / col[down]
        ratios[up] = (ub_b[up] - xB[up]) / (-col[up])
        np.maximum(ratios, 0.0, out=ratios)
        if harris:
            # two-pass ratio test: largest pivot among rows within the relaxed step
            relaxed = np.full(m, np.inf)
            relaxed[down] = (xB[down] + HARRIS_TOL) / col[down]
            relaxed[up] = (ub_b[up] - xB[up] + HARRIS_TOL) / (-col[up])
            tlim = max(relaxed.min(), 0.0) if m else np.inf
        else:
            tlim = ratios.min() if m else np.inf

        if upper[j] <= tlim:
            if np.isinf(upper[j]):
                return STATUS_UNBOUNDED, it
            t = upper[j]
            xB -= t * col
            at_upper[j] = 1 - at_upper[j]
            streak = 0
            it += 1
            continue

        if harris:
            elig = np.flatnonzero((down | up) & (ratios <= tlim))
            r = int(elig[np.argmax(np.abs(col[elig]))])
        else:
            ties = np.flatnonzero(ratios <= tlim + TIE_TOL)
            r = int(ties[np.argmin(basis[ties])])
        t = ratios[r]
        leave_up = bool(col[r] < 0.0)
        streak = streak + 1 if t <= TIE_TOL else 0

        xB -= t * col
        entering_val = t if sigma > 0 else upper[j] - t
        leaving = int(basis[r])

        T[r, :] /= T[r, j]
        colj = T[:, j].copy()
        colj[r] = 0.0
        T -= np.outer(colj, T[r, :])
        d -= d[j] * T[r, :]

        xB[r] = entering_val
        basis[r] = j
        pos[j] = r
        pos[leaving] = -1
        at_upper[leaving] = 1 if leave_up else 0
        at_upper[j] = 0
        it += 1
    return STATUS_ITERATION_LIMIT, it
