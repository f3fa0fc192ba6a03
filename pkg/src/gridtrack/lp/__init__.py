"""Linear-programming core: bundled dense simplex plus pluggable backends."""

from __future__ import annotations

import numpy as np

from .problem import (
    EQ,
    GE,
    INFEASIBLE,
    ITERATION_LIMIT,
    LE,
    OPTIMAL,
    UNBOUNDED,
    LpFormatError,
    LpOptions,
    LpResult,
    StandardFormLp,
    dual_objective,
    write_lp_format,
)
from .simplex import KERNEL, kernel_available, solve_lp


class SimplexBackend:
    """The bundled two-phase simplex."""

    name = "simplex"

    def __init__(self, options: LpOptions | None = None, kernel: str | None = None):
        self.options = options or LpOptions()
        self.kernel = kernel

    def solve(self, lp: StandardFormLp) -> LpResult:
        return solve_lp(lp, self.options, self.kernel)


class ScipyBackend:
    """HiGHS through :func:`scipy.optimize.linprog`, for cross-checking."""

    name = "highs"

    def solve(self, lp: StandardFormLp) -> LpResult:
        from scipy.optimize import linprog

        le = [i for i, s in enumerate(lp.senses) if s == LE]
        ge = [i for i, s in enumerate(lp.senses) if s == GE]
        eq = [i for i, s in enumerate(lp.senses) if s == EQ]
        A_ub = np.vstack([lp.A[le], -lp.A[ge]]) if (le or ge) else None
        b_ub = np.concatenate([lp.b[le], -lp.b[ge]]) if (le or ge) else None
        A_eq = lp.A[eq] if eq else None
        b_eq = lp.b[eq] if eq else None
        bounds = [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi) for lo, hi in zip(lp.lb, lp.ub)]
        res = linprog(lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
        status = {0: OPTIMAL, 1: ITERATION_LIMIT, 2: INFEASIBLE, 3: UNBOUNDED}.get(res.status, INFEASIBLE)
        x = np.asarray(res.x) if res.x is not None else np.full(lp.n_vars, np.nan)
        duals = np.zeros(lp.n_rows)
        if status == OPTIMAL:
            if le or ge:
                marg = res.ineqlin.marginals
                duals[le] = marg[: len(le)]
                duals[ge] = -marg[len(le):]
            if eq:
                duals[eq] = res.eqlin.marginals
        reduced = lp.c - lp.A.T @ duals
        obj = float(res.fun) if status == OPTIMAL else np.nan
        return LpResult(status, x, obj, duals=duals, reduced_costs=reduced, iterations=int(res.nit), backend=self.name)


def get_backend(name: str = "simplex", **kwargs):
    if name == "simplex":
        return SimplexBackend(**kwargs)
    if name in ("highs", "scipy"):
        return ScipyBackend()
    raise ValueError(f"unknown LP backend {name!r}")


__all__ = [
    "EQ",
    "GE",
    "LE",
    "INFEASIBLE",
    "ITERATION_LIMIT",
    "OPTIMAL",
    "UNBOUNDED",
    "KERNEL",
    "LpFormatError",
    "LpOptions",
    "LpResult",
    "ScipyBackend",
    "SimplexBackend",
    "StandardFormLp",
    "dual_objective",
    "get_backend",
    "kernel_available",
    "solve_lp",
    "write_lp_format",
]
