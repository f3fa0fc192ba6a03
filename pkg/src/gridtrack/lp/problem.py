"""LP containers shared by every backend."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

LE, EQ, GE = "<=", "=", ">="
SENSES = (LE, EQ, GE)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"


class LpFormatError(ValueError):
    """Raised when an LP is not well formed."""


@dataclass
class StandardFormLp:
    """``min c @ x`` subject to ``A @ x (senses) b`` and ``lb <= x <= ub``.

    Bounds may be infinite; ``A`` and ``c`` must be finite.
    """

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    senses: list
    lb: np.ndarray
    ub: np.ndarray
    var_names: Optional[list] = None
    row_names: Optional[list] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.lb = np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.asarray(self.ub, dtype=float).ravel()
        self.senses = list(self.senses)
        self.validate()

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size

    def validate(self) -> None:
        m, n = self.A.shape
        if self.b.size != m or len(self.senses) != m:
            raise LpFormatError(f"row count mismatch: A has {m} rows, b {self.b.size}, senses {len(self.senses)}")
        if self.lb.size != n or self.ub.size != n:
            raise LpFormatError("bound vectors must match the number of variables")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.b))):
            raise LpFormatError("A, b and c must be finite")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise LpFormatError("bounds must not be NaN")
        bad = [s for s in self.senses if s not in SENSES]
        if bad:
            raise LpFormatError(f"unknown row sense {bad[0]!r}")
        if np.any(self.lb > self.ub):
            j = int(np.flatnonzero(self.lb > self.ub)[0])
            raise LpFormatError(f"variable {j} has lb > ub")

    def row_activity(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x

    def max_violation(self, x: np.ndarray) -> float:
        """Largest primal infeasibility of ``x`` over rows and bounds."""
        act = self.A @ x
        viol = [0.0]
        for s, a, bi in zip(self.senses, act, self.b):
            if s == LE:
                viol.append(a - bi)
            elif s == GE:
                viol.append(bi - a)
            else:
                viol.append(abs(a - bi))
        viol.append(float(np.max(self.lb - x, initial=0.0)))
        viol.append(float(np.max(x - self.ub, initial=0.0)))
        return float(max(viol))


@dataclass
class LpOptions:
    pivot_tol: float = 1e-9
    dual_tol: float = 1e-9
    feas_tol: float = 1e-7
    max_iter: Optional[int] = None
    rule: str = "bland"


@dataclass
class LpResult:
    status: str
    x: np.ndarray
    objective: float
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reduced_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0
    backend: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def dual_objective(lp: StandardFormLp, res: LpResult, tol: float = 1e-9) -> float:
    """Dual bound implied by the row duals and reduced costs of ``res``.

    Reduced costs below ``tol * (1 + |c|)`` count as zero.
    """
    val = float(lp.b @ res.duals)
    r = res.reduced_costs
    small = np.abs(r) <= tol * (1.0 + np.abs(lp.c))
    pos = (r > 0) & ~small
    neg = (r < 0) & ~small
    with np.errstate(invalid="ignore"):
        val += float(np.sum(np.where(pos, r * lp.lb, 0.0)))
        val += float(np.sum(np.where(neg, r * lp.ub, 0.0)))
    return val


def _fmt(v: float) -> str:
    return repr(float(v))


def write_lp_format(lp: StandardFormLp, name: str = "gridtrack") -> str:
    """Render ``lp`` in CPLEX LP text format for external cross-checks."""
    vn = lp.var_names or [f"x{j}" for j in range(lp.n_vars)]
    rn = lp.row_names or [f"r{i}" for i in range(lp.n_rows)]

    def expr(coefs):
        terms = []
        for j, a in enumerate(coefs):
            if a == 0.0:
                continue
            sign = "-" if a < 0 else "+"
            terms.append(f"{sign} {_fmt(abs(a))} {vn[j]}")
        if not terms:
            return "0 " + vn[0]
        out = " ".join(terms)
        return out[2:] if out.startswith("+ ") else out

    lines = [f"\\ {name}", "Minimize", f" obj: {expr(lp.c)}", "Subject To"]
    for i in range(lp.n_rows):
        lines.append(f" {rn[i]}: {expr(lp.A[i])} {lp.senses[i]} {_fmt(lp.b[i])}")
    lines.append("Bounds")
    for j in range(lp.n_vars):
        lo, hi = lp.lb[j], lp.ub[j]
        if np.isinf(lo) and np.isinf(hi):
            lines.append(f" {vn[j]} free")
            continue
        lo_s = "-inf" if np.isinf(lo) else _fmt(lo)
        hi_s = "+inf" if np.isinf(hi) else _fmt(hi)
        lines.append(f" {lo_s} <= {vn[j]} <= {hi_s}")
    lines.append("End")
    return "\n".join(lines) + "\n"
