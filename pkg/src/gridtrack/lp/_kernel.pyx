# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled bounded-variable simplex iterations (see ``_kernel_py`` for the reference)."""

from libc.math cimport INFINITY, fabs, isinf

cdef int STATUS_OPTIMAL = 0
cdef int STATUS_UNBOUNDED = 1
cdef int STATUS_ITERATION_LIMIT = 2
cdef double TIE_TOL = 1e-12
cdef double HARRIS_TOL = 1e-9
cdef int DEGENERATE_STREAK = 50


def run_simplex(double[:, ::1] T, double[::1] xB, double[::1] d, long long[::1] basis,
                long long[::1] pos, signed char[::1] at_upper, double[::1] upper,
                long long max_iter, int rule, double dual_tol, double pivot_tol):
    cdef Py_ssize_t m = T.shape[0]
    cdef Py_ssize_t N = T.shape[1]
    cdef Py_ssize_t i, k, j, r
    cdef long long it = 0
    cdef int streak = 0
    cdef double sigma, dj, best, a, ratio, tlim, t, ub, piv, f, entering_val, relaxed, best_piv
    cdef long long leaving, best_basis
    cdef bint leave_up, cand, harris
    while it < max_iter:
        harris = rule == 1 and streak <= DEGENERATE_STREAK
        j = -1
        best = 0.0
        for k in range(N):
            if pos[k] >= 0 or upper[k] <= 0.0:
                continue
            dj = d[k]
            if at_upper[k] == 0:
                cand = dj < -dual_tol
            else:
                cand = dj > dual_tol
            if not cand:
                continue
            if harris:
                if j < 0 or fabs(dj) > best:
                    j = k
                    best = fabs(dj)
            else:
                j = k
                break
        if j < 0:
            return STATUS_OPTIMAL, it
        sigma = 1.0 if at_upper[j] == 0 else -1.0

        # step limit: exact minimum ratio, or the Harris-relaxed one
        tlim = INFINITY
        for i in range(m):
            a = T[i, j] * sigma
            if a > pivot_tol:
                if harris:
                    ratio = (xB[i] + HARRIS_TOL) / a
                else:
                    ratio = xB[i] / a
            elif a < -pivot_tol and not isinf(upper[basis[i]]):
                if harris:
                    ratio = (upper[basis[i]] - xB[i] + HARRIS_TOL) / (-a)
                else:
                    ratio = (upper[basis[i]] - xB[i]) / (-a)
            else:
                continue
            if not harris and ratio < 0.0:
                ratio = 0.0
            if ratio < tlim:
                tlim = ratio
        if tlim < 0.0:
            tlim = 0.0

        if upper[j] <= tlim:
            if isinf(upper[j]):
                return STATUS_UNBOUNDED, it
            t = upper[j]
            for i in range(m):
                xB[i] -= t * (T[i, j] * sigma)
            at_upper[j] = 1 - at_upper[j]
            streak = 0
            it += 1
            continue

        # leaving row: largest pivot within the limit (Harris) or smallest basic index (Bland)
        r = -1
        best_basis = 0
        best_piv = 0.0
        leave_up = False
        t = 0.0
        for i in range(m):
            a = T[i, j] * sigma
            if a > pivot_tol:
                ratio = xB[i] / a
            elif a < -pivot_tol and not isinf(upper[basis[i]]):
                ratio = (upper[basis[i]] - xB[i]) / (-a)
            else:
                continue
            if ratio < 0.0:
                ratio = 0.0
            if harris:
                if ratio <= tlim and (r < 0 or fabs(a) > best_piv):
                    r = i
                    best_piv = fabs(a)
                    leave_up = a < 0.0
                    t = ratio
            elif ratio <= tlim + TIE_TOL:
                if r < 0 or basis[i] < best_basis:
                    r = i
                    best_basis = basis[i]
                    leave_up = a < 0.0
                    t = ratio
        if t <= TIE_TOL:
            streak += 1
        else:
            streak = 0

        for i in range(m):
            xB[i] -= t * (T[i, j] * sigma)
        entering_val = t if sigma > 0 else upper[j] - t
        leaving = basis[r]

        piv = T[r, j]
        for k in range(N):
            T[r, k] = T[r, k] / piv
        for i in range(m):
            if i == r:
                continue
            f = T[i, j]
            if f == 0.0:
                continue
            for k in range(N):
                T[i, k] -= f * T[r, k]
        dj = d[j]
        for k in range(N):
            d[k] -= dj * T[r, k]

        xB[r] = entering_val
        basis[r] = j
        pos[j] = r
        pos[leaving] = -1
        at_upper[leaving] = 1 if leave_up else 0
        at_upper[j] = 0
        it += 1
    return STATUS_ITERATION_LIMIT, it
