"""Receding-horizon LP that tracks the 5-minute dispatch plan at the GCP.

At step ``k`` the horizon runs to ``k_end``, the last 30-s index of the
current 5-minute slot. The LP minimises

    w_disp * |eps + eps_hat|
  + w_evcs * sum_i [ 3600/(dt L_i) sum_l max(target - soc_end, 0)
                     + 1/((k_end - k) L_i) sum_l sum |p_{j+1} - p_j| ]
  + w_bess * sum_b sum_j |p_bess|

subject to the linearised grid model, EV and BESS SoC dynamics and the
polygonised converter/transformer capability circles. Absolute values and
the hinge are written with epigraph variables.

Only the dispatch, |p|, wear and hinge rows are always present. SoC,
capability and grid rows are *lazy*: they are added when the current LP
solution violates them and the LP is re-solved, so the returned point is
optimal for the full problem.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import lp as lpmod
from .forecasting import STEPS_PER_SLOT, ForecastSet, horizon_end
from .grid_model import Linearization, NetworkModel
from .resources import BessState, EvcsState, bess_capability_polygon, interpolate_soc_target

log = logging.getLogger(__name__)

SLOT_STEPS = STEPS_PER_SLOT


class AssemblyError(ValueError):
    """Inputs to the MPC do not fit together."""


@dataclass
class DispatchPlan:
    """288 five-minute GCP setpoints in kW (import positive)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != 288:
            raise ValueError(f"dispatch plan needs 288 values, got {self.values.size}")

    def at(self, k) -> np.ndarray:
        return self.values[np.asarray(k) // SLOT_STEPS]

    def check_capacity(self, s_max_kva: float) -> None:
        worst = float(np.max(np.abs(self.values)))
        if worst > s_max_kva:
            raise ValueError(f"dispatch plan reaches {worst:.1f} kW, above the {s_max_kva:.1f} kVA transformer")


@dataclass
class TrackingLedger:
    """GCP measurements already taken in the current slot."""

    k: int
    measured: list = field(default_factory=list)

    @property
    def k_start(self) -> int:
        return (self.k // SLOT_STEPS) * SLOT_STEPS

    @property
    def k_end(self) -> int:
        return horizon_end(self.k)

    def __post_init__(self):
        if len(self.measured) != self.k - self.k_start:
            raise ValueError(
                f"ledger at k={self.k} needs {self.k - self.k_start} measurements, got {len(self.measured)}"
            )


@dataclass
class Weights:
    """Per-term objective weights.

    The terms carry different units (kWh, SoC fraction, kW). The defaults
    rank them: tracking first, then EV wear and target shortfall, with BESS
    usage cheapest, so that the battery absorbs forecast error before any EV
    is curtailed.
    """

    dispatch: float = 1000.0
    evcs: float = 10.0
    bess: float = 0.01


@dataclass
class MpcConfig:
    dt_s: float = 30.0
    weights: Weights = field(default_factory=Weights)
    polygon_segments: int = 12
    gcp_segments: int = 12
    literal_prefactors: bool = False
    slack_penalty: float = 1e4
    lazy: bool = True
    max_rounds: int = 25
    lazy_tol: float = 1e-9
    # BESS q may move at most this far (kVAr) from its last applied value;
    # None disables the trust region
    q_trust_kvar: float | None = 20.0
    # closed loop: re-solve this many times, each time linearizing at the AC
    # operating point of the previous plan's first step under forecast injections
    relinearize_passes: int = 2
    # during those passes the first-step setpoints stay within this box (kW,
    # kVAr) of the point the grid was re-linearized at
    relinearize_trust_kw: float = 1.0
    # cap each EV's SoC at max(target, current SoC); False allows charging to 1
    ev_stop_at_target: bool = True


def restrict_first_step(problem: MpcProblem, bess_sp: dict, ev_sp: dict, radius: float) -> None:
    """Box the first-step BESS and EV columns to ``radius`` around given setpoints, in place."""
    def clamp(col, centre):
        problem.lb[col] = min(max(problem.lb[col], centre - radius), problem.ub[col])
        problem.ub[col] = max(min(problem.ub[col], centre + radius), problem.lb[col])

    for name, (p, q) in bess_sp.items():
        clamp(problem.bess_p[name][0], p)
        clamp(problem.bess_q[name][0], q)
    for sid, p in ev_sp.items():
        if sid in problem.ev_p:
            clamp(problem.ev_p[sid][0], p)


@dataclass
class Affine:
    """``const + coef @ x`` over the LP columns."""

    const: float
    coef: np.ndarray

    def value(self, x) -> float:
        return float(self.const + self.coef @ x)


def incurred_error(ledger: TrackingLedger, plan: DispatchPlan, dt_s: float = 30.0, literal: bool = False) -> float:
    """Energy (kWh) by which the GCP has missed the plan so far in this slot.

    Each elapsed step contributes ``(plan - measured) * dt / 3600``. With
    ``literal=True`` the whole sum is instead scaled by ``dt*(k+1-k_start)/3600``.
    """
    k0 = ledger.k_start
    if ledger.k == k0:
        return 0.0
    j = np.arange(k0, ledger.k)
    diff = float(np.sum(plan.at(j) - np.asarray(ledger.measured, dtype=float)))
    if literal:
        return dt_s * (ledger.k + 1 - k0) / 3600.0 * diff
    return dt_s / 3600.0 * diff


def anticipated_error_expr(k: int, k_end: int, plan: DispatchPlan, gcp: list, dt_s: float = 30.0,
                           literal: bool = False) -> Affine:
    """Affine energy error (kWh) still to be incurred over ``k..k_end``.

    ``gcp[j]`` is the :class:`Affine` GCP active power at index ``k + j``.
    """
    if len(gcp) != k_end - k + 1:
        raise AssemblyError("one GCP expression per horizon step is required")
    scale = dt_s * (k_end - k) / 3600.0 if literal else dt_s / 3600.0
    disp = plan.at(np.arange(k, k_end + 1))
    const = scale * float(np.sum(disp - np.array([g.const for g in gcp])))
    coef = -scale * np.sum([g.coef for g in gcp], axis=0)
    return Affine(const, coef)


@dataclass
class EvTerm:
    """Everything the LP needs about one connected EV."""

    session_id: str
    station: str
    plug: int
    bus: str
    n_plugs: int
    soc: float
    target: float
    e_max_kwh: float
    last_p: float
    lo: np.ndarray
    hi: np.ndarray
    connected: np.ndarray
    soc_max: float = 1.0


@dataclass
class MpcProblem:
    """Fully assembled LP for one control step; all rows are ``A x <= b``."""

    k: int
    k_end: int
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    lazy: np.ndarray
    group: list
    slack_cost: np.ndarray
    block: np.ndarray
    keys: list
    names: list
    bess_p: dict
    bess_q: dict
    bess_abs: dict
    ev_p: dict
    ev_terms: list
    bess_names: list
    n_primary: int
    n_aux: int
    dispatch: Affine
    eps_hat: float
    gcp: list
    config: MpcConfig
    gcp_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def horizon(self) -> int:
        return self.k_end - self.k + 1

    @property
    def n_vars(self) -> int:
        return self.c.size

    def primary_slice(self) -> slice:
        return slice(0, self.n_primary)


@dataclass
class MpcSolution:
    status: str
    k: int
    k_end: int
    bess_p: dict
    bess_q: dict
    ev_p: dict
    objective: float
    terms: dict
    eps_hat: float
    eps: float
    gcp_p: np.ndarray
    x: np.ndarray
    iterations: int = 0
    rounds: int = 0
    slack_used: float = 0.0
    n_rows: int = 0
    active_keys: set = field(default_factory=set)

    def first(self) -> tuple:
        """Setpoints to actuate now: ``({bess: (p, q)}, {session: p})``."""
        bess = {n: (float(self.bess_p[n][0]), float(self.bess_q[n][0])) for n in self.bess_p}
        ev = {s: float(v[0]) for s, v in self.ev_p.items()}
        return bess, ev


class _Columns:
    def __init__(self):
        self.lb, self.ub, self.cost, self.names = [], [], [], []

    def add(self, name, lo, hi, cost=0.0, count=1):
        start = len(self.lb)
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (count,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (count,))
        for i in range(count):
            self.lb.append(float(lo[i]))
            self.ub.append(float(hi[i]))
            self.cost.append(float(cost))
            self.names.append(f"{name}[{i}]" if count > 1 else name)
        return np.arange(start, start + count)

    def __len__(self):
        return len(self.lb)


class _Rows:
    def __init__(self, n):
        self.n = n
        self.blocks = []

        self.n_blocks = 0

    def add(self, A, b, group, lazy, slack=0.0, block_size=1, steps=None):
        """Append rows; lazy rows in the same block of ``block_size`` are activated together.

        ``steps`` gives the absolute time index of each row and keys the row
        for warm starts as ``(group, step, position within the step)``.
        """
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        m = A.shape[0]
        if m:
            ids = self.n_blocks + np.arange(m) // block_size
            self.n_blocks = int(ids[-1]) + 1
            if steps is None:
                keys = [(group, -1, i) for i in range(m)]
            else:
                steps = np.asarray(steps)
                keys, seen = [], {}
                for st in steps.tolist():
                    keys.append((group, st, seen.get(st, 0)))
                    seen[st] = seen.get(st, 0) + 1
            self.blocks.append((A, b, group, lazy, slack, ids, keys))

    def build(self):
        if not self.blocks:
            return np.zeros((0, self.n)), np.zeros(0), [], np.zeros(0, bool), np.zeros(0), np.zeros(0, int)
        A = np.vstack([blk[0] for blk in self.blocks])
        b = np.concatenate([blk[1] for blk in self.blocks])
        group = [g for blk in self.blocks for g in [blk[2]] * blk[0].shape[0]]
        lazy = np.concatenate([np.full(blk[0].shape[0], blk[3]) for blk in self.blocks])
        slack = np.concatenate([np.full(blk[0].shape[0], blk[4]) for blk in self.blocks])
        ids = np.concatenate([blk[5] for blk in self.blocks])
        self.keys = [key for blk in self.blocks for key in blk[6]]
        return A, b, group, lazy, slack, ids


def ev_terms_from_stations(stations, k: int, k_end: int, stop_at_target: bool = False) -> list:
    """Connected EVs at ``k`` with their horizon bounds and interpolated targets."""
    terms = []
    idx = np.arange(k, k_end + 1)
    for st in stations:
        for l, plug in enumerate(st.plugs):
            s = plug.session
            if s is None or not s.connected(k):
                continue
            conn = (idx >= s.k_arrival) & (idx <= s.k_departure)
            terms.append(
                EvTerm(
                    session_id=s.session_id,
                    station=st.name,
                    plug=l,
                    bus=st.bus,
                    n_plugs=st.n_plugs,
                    soc=plug.soc,
                    target=interpolate_soc_target(s, plug.soc, k, k_end),
                    e_max_kwh=s.e_max_kwh,
                    last_p=plug.last_p_kw,
                    lo=np.where(conn, s.p_min_kw, 0.0),
                    hi=np.where(conn, s.p_max_kw, 0.0),
                    connected=conn,
                    soc_max=max(s.soc_target, plug.soc) if stop_at_target else 1.0,
                )
            )
    return terms


def fixed_injections(net: NetworkModel, forecasts: ForecastSet, loads, pvs):
    """Uncontrollable nodal injections ``(p, q)``, each of shape ``(H, n_b - 1)``."""
    H = forecasts.length
    nb = net.n_buses - 1
    p = np.zeros((H, nb))
    q = np.zeros((H, nb))
    for ld in loads:
        i = net.pq_index(ld.bus)
        p[:, i] -= forecasts.load_p[ld.name]
        q[:, i] -= forecasts.load_q[ld.name]
    for pv in pvs:
        i = net.pq_index(pv.bus)
        p[:, i] += forecasts.pv_p[pv.name]
        q[:, i] += forecasts.pv_q[pv.name]
    return p, q


def assemble(
    k: int,
    plan: DispatchPlan,
    ledger: TrackingLedger,
    forecasts: ForecastSet,
    lin: Linearization,
    bess: list,
    evs: list,
    net: NetworkModel,
    loads=(),
    pvs=(),
    config: MpcConfig | None = None,
) -> MpcProblem:
    """Build the LP for control step ``k``.

    ``evs`` is either a list of :class:`EvcsState` or of pre-built
    :class:`EvTerm`. Uncontrollable injections are pinned to the forecasts.
    """
    cfg = config or MpcConfig()
    w = cfg.weights
    k_end = horizon_end(k)
    H = k_end - k + 1
    nb = net.n_buses - 1
    if lin.Av.shape != (nb, 2 * nb) or lin.Ai.shape != (net.n_lines, 2 * nb) or lin.A0.shape != (2, 2 * nb):
        raise AssemblyError(
            f"linearization shapes {lin.Av.shape}/{lin.Ai.shape}/{lin.A0.shape} do not match a network "
            f"with {nb} non-slack buses and {net.n_lines} lines"
        )
    if forecasts.k != k or forecasts.k_end != k_end:
        raise AssemblyError(f"forecasts cover {forecasts.k}..{forecasts.k_end}, horizon is {k}..{k_end}")
    if ledger.k != k:
        raise AssemblyError(f"ledger is at k={ledger.k}, not {k}")
    if evs and isinstance(evs[0], EvcsState):
        ev_terms = ev_terms_from_stations(evs, k, k_end, cfg.ev_stop_at_target)
    else:
        ev_terms = list(evs)

    cols = _Columns()
    bess_p, bess_q, bess_abs, ev_p = {}, {}, {}, {}
    for b in bess:
        bess_p[b.name] = cols.add(f"p_bess_{b.name}", -b.s_max_kva, b.s_max_kva, count=H)
        q_lo, q_hi = -b.s_max_kva, b.s_max_kva
        if cfg.q_trust_kvar is not None:
            q_lo = min(max(q_lo, b.q_kvar - cfg.q_trust_kvar), 0.0)
            q_hi = max(min(q_hi, b.q_kvar + cfg.q_trust_kvar), 0.0)
        bess_q[b.name] = cols.add(f"q_bess_{b.name}", q_lo, q_hi, count=H)
    for e in ev_terms:
        ev_p[e.session_id] = cols.add(f"p_ev_{e.session_id}", e.lo, e.hi, count=H)
    n_primary = len(cols)

    for b in bess:
        bess_abs[b.name] = cols.add(f"abs_bess_{b.name}", 0.0, b.s_max_kva, cost=w.bess, count=H)
    wear_cols, hinge_cols = {}, {}
    for e in ev_terms:
        if k < k_end:
            n_pairs = int(np.count_nonzero(e.connected))
            wear_cost = w.evcs / ((k_end - k) * e.n_plugs)
            wear_cols[e.session_id] = cols.add(f"wear_{e.session_id}", 0.0, np.inf, cost=wear_cost, count=n_pairs)
        hinge_cost = w.evcs * 3600.0 / (cfg.dt_s * e.n_plugs)
        hinge_cols[e.session_id] = cols.add(f"hinge_{e.session_id}", 0.0, np.inf, cost=hinge_cost)[0]
    t_col = cols.add("dispatch_abs", 0.0, np.inf, cost=w.dispatch)[0]
    n = len(cols)
    n_aux = n - n_primary

    # controllable part of the nodal injection vector, per horizon step: (H, 2nb, n)
    ctrl = np.zeros((H, 2 * nb, n))
    for b in bess:
        i = net.pq_index(b.bus)
        ctrl[np.arange(H), i, bess_p[b.name]] = 1.0
        ctrl[np.arange(H), nb + i, bess_q[b.name]] = 1.0
    for e in ev_terms:
        i = net.pq_index(e.bus)
        ctrl[np.arange(H), i, ev_p[e.session_id]] = 1.0
    fp, fq = fixed_injections(net, forecasts, loads, pvs)
    xfix = np.hstack([fp, fq])  # (H, 2nb)

    rows = _Rows(n)

    # GCP power and dispatch error
    gcp_p = [Affine(float(lin.A0[0] @ xfix[j] + lin.b0[0]), lin.A0[0] @ ctrl[j]) for j in range(H)]
    gcp_q = [Affine(float(lin.A0[1] @ xfix[j] + lin.b0[1]), lin.A0[1] @ ctrl[j]) for j in range(H)]
    eps_hat = incurred_error(ledger, plan, cfg.dt_s, cfg.literal_prefactors)
    eps = anticipated_error_expr(k, k_end, plan, gcp_p, cfg.dt_s, cfg.literal_prefactors)
    disp = Affine(eps.const + eps_hat, eps.coef)
    tvec = np.zeros(n)
    tvec[t_col] = 1.0
    rows.add(np.vstack([disp.coef - tvec, -disp.coef - tvec]), [-disp.const, disp.const], "dispatch", False)

    # |p_bess| epigraph
    for b in bess:
        A = np.zeros((2 * H, n))
        A[np.arange(H), bess_p[b.name]] = 1.0
        A[np.arange(H), bess_abs[b.name]] = -1.0
        A[H + np.arange(H), bess_p[b.name]] = -1.0
        A[H + np.arange(H), bess_abs[b.name]] = -1.0
        rows.add(A, np.zeros(2 * H), f"bess_abs:{b.name}", False)

    # EV wear and target hinge
    for e in ev_terms:
        cj = np.flatnonzero(e.connected)
        pc = ev_p[e.session_id]
        if e.session_id in wear_cols:
            wc = wear_cols[e.session_id]
            A = np.zeros((2 * len(cj), n))
            rhs = np.zeros(2 * len(cj))
            for r, j in enumerate(cj):
                A[2 * r, pc[j]] = 1.0
                A[2 * r + 1, pc[j]] = -1.0
                if j == 0:
                    rhs[2 * r] = e.last_p
                    rhs[2 * r + 1] = -e.last_p
                else:
                    A[2 * r, pc[j - 1]] = -1.0
                    A[2 * r + 1, pc[j - 1]] = 1.0
                A[2 * r, wc[r]] = -1.0
                A[2 * r + 1, wc[r]] = -1.0
            rows.add(A, rhs, f"wear:{e.session_id}", False)
        cstep = cfg.dt_s / 3600.0 / e.e_max_kwh
        A = np.zeros((1, n))
        A[0, pc[cj]] = cstep
        A[0, hinge_cols[e.session_id]] = -1.0
        rows.add(A, [e.soc - e.target], f"hinge:{e.session_id}", False)

        # 0 <= soc_j <= soc_max for connected steps (cumulative)
        cum = np.zeros((len(cj), n))
        for r, j in enumerate(cj):
            cum[r, pc[cj[: r + 1]]] = cstep
        rows.add(cum, np.full(len(cj), e.soc), f"ev_soc_min:{e.session_id}", True, steps=k + cj)
        rows.add(-cum, np.full(len(cj), e.soc_max - e.soc), f"ev_soc_max:{e.session_id}", True, steps=k + cj)

    # BESS SoC and capability polygon
    poly = None
    for b in bess:
        cstep = cfg.dt_s / 3600.0 / b.e_max_kwh
        cum = np.zeros((H, n))
        for j in range(H):
            cum[j, bess_p[b.name][: j + 1]] = cstep
        rows.add(cum, np.full(H, b.soc - b.soc_min), f"bess_soc_min:{b.name}", True, steps=k + np.arange(H))
        rows.add(-cum, np.full(H, b.soc_max - b.soc), f"bess_soc_max:{b.name}", True, steps=k + np.arange(H))
        poly = bess_capability_polygon(b.s_max_kva, cfg.polygon_segments)
        M = poly.shape[0]
        A = np.zeros((H * M, n))
        for j in range(H):
            A[j * M:(j + 1) * M, bess_p[b.name][j]] = poly[:, 0]
            A[j * M:(j + 1) * M, bess_q[b.name][j]] = poly[:, 1]
        rows.add(A, np.tile(poly[:, 2], H), f"bess_cap:{b.name}", True, block_size=M, steps=np.repeat(k + np.arange(H), M))

    # linearised grid constraints
    pen_pu = cfg.slack_penalty
    v_c = np.einsum("ik,hkn->hin", lin.Av, ctrl)  # (H, nb, n)
    v_0 = xfix @ lin.Av.T + lin.bv  # (H, nb)
    per_bus = np.repeat(k + np.arange(H), nb)
    rows.add(v_c.reshape(-1, n), (net.v_max - v_0).ravel(), "v_max", True, pen_pu, steps=per_bus)
    rows.add(-v_c.reshape(-1, n), (v_0 - net.v_min).ravel(), "v_min", True, pen_pu, steps=per_bus)
    i_c = np.einsum("ik,hkn->hin", lin.Ai, ctrl)
    i_0 = xfix @ lin.Ai.T + lin.bi
    rows.add(i_c.reshape(-1, n), (net.ampacity[None, :] - i_0).ravel(), "i_max", True, pen_pu,
             steps=np.repeat(k + np.arange(H), net.n_lines))
    gpoly = bess_capability_polygon(net.s_max_kva, cfg.gcp_segments)
    G = gpoly.shape[0]
    A = np.zeros((H * G, n))
    rhs = np.zeros(H * G)
    for j in range(H):
        A[j * G:(j + 1) * G] = np.outer(gpoly[:, 0], gcp_p[j].coef) + np.outer(gpoly[:, 1], gcp_q[j].coef)
        rhs[j * G:(j + 1) * G] = gpoly[:, 2] - gpoly[:, 0] * gcp_p[j].const - gpoly[:, 1] * gcp_q[j].const
    rows.add(A, rhs, "gcp_cap", True, pen_pu / net.s_base_kva, block_size=G, steps=np.repeat(k + np.arange(H), G))

    Amat, bvec, group, lazy, slack, block = rows.build()
    gcp_rows = np.array([g == "gcp_cap" for g in group], dtype=bool)
    return MpcProblem(
        k=k,
        k_end=k_end,
        c=np.array(cols.cost),
        A=Amat,
        b=bvec,
        lb=np.array(cols.lb),
        ub=np.array(cols.ub),
        lazy=lazy if cfg.lazy else np.zeros_like(lazy),
        group=group,
        slack_cost=slack,
        block=block,
        keys=rows.keys,
        names=cols.names,
        bess_p=bess_p,
        bess_q=bess_q,
        bess_abs=bess_abs,
        ev_p=ev_p,
        ev_terms=ev_terms,
        bess_names=[b.name for b in bess],
        n_primary=n_primary,
        n_aux=n_aux,
        dispatch=disp,
        eps_hat=eps_hat,
        gcp=gcp_p,
        config=cfg,
        gcp_rows=gcp_rows,
    )


def objective_terms(problem: MpcProblem, x) -> dict:
    """Unweighted objective terms evaluated directly from the primary variables."""
    cfg = problem.config
    k, k_end = problem.k, problem.k_end
    f_disp = abs(problem.dispatch.value(x))
    f_bess = float(sum(np.sum(np.abs(x[c])) for c in problem.bess_p.values()))
    f_evcs = 0.0
    for e in problem.ev_terms:
        p = x[problem.ev_p[e.session_id]]
        cj = np.flatnonzero(e.connected)
        soc_end = e.soc - cfg.dt_s / 3600.0 / e.e_max_kwh * float(np.sum(p[cj]))
        f_evcs += 3600.0 / (cfg.dt_s * e.n_plugs) * max(e.target - soc_end, 0.0)
        if k < k_end:
            prev = np.concatenate([[e.last_p], p[cj[:-1]]]) if cj.size and cj[0] == 0 else p[cj - 1]
            f_evcs += float(np.sum(np.abs(p[cj] - prev))) / ((k_end - k) * e.n_plugs)
    w = cfg.weights
    total = w.dispatch * f_disp + w.evcs * f_evcs + w.bess * f_bess
    return {"disp": f_disp, "evcs": f_evcs, "bess": f_bess, "total": total}


def _lp_from_rows(problem: MpcProblem, active: np.ndarray, with_slack: bool, names: bool = False):
    A = problem.A[active]
    b = problem.b[active]
    c, lb, ub = problem.c, problem.lb, problem.ub
    n_slack = 0
    if with_slack:
        pen = problem.slack_cost[active]
        sl = np.flatnonzero(pen > 0)
        n_slack = sl.size
        if n_slack:
            S = np.zeros((A.shape[0], n_slack))
            S[sl, np.arange(n_slack)] = -1.0
            A = np.hstack([A, S])
            c = np.concatenate([c, pen[sl]])
            lb = np.concatenate([lb, np.zeros(n_slack)])
            ub = np.concatenate([ub, np.full(n_slack, np.inf)])
    vn = None
    rn = None
    if names:
        vn = [nm.replace("[", "_").replace("]", "") for nm in problem.names] + [f"slack_{i}" for i in range(n_slack)]
        idx = np.flatnonzero(active)
        rn = [f"{problem.group[i].replace(':', '_')}_{i}" for i in idx]
    return lpmod.StandardFormLp(c, A, b, [lpmod.LE] * A.shape[0], lb, ub, var_names=vn, row_names=rn), n_slack


def to_standard_form(problem: MpcProblem, names: bool = True) -> lpmod.StandardFormLp:
    """The complete LP (all rows, no slack) for export or external solvers."""
    lp, _ = _lp_from_rows(problem, np.ones(problem.b.size, dtype=bool), False, names=names)
    return lp


def _solve_rows(problem: MpcProblem, backend, with_slack: bool, hint=None):
    cfg = problem.config
    active = ~problem.lazy
    if hint:
        pre = np.array([key in hint for key in problem.keys], dtype=bool) & problem.lazy
        if pre.any():
            active = active | np.isin(problem.block, problem.block[pre])
    total_iter = 0
    rounds = 0
    while True:
        lp, n_slack = _lp_from_rows(problem, active, with_slack)
        res = backend.solve(lp)
        total_iter += res.iterations
        rounds += 1
        if res.status not in (lpmod.OPTIMAL,):
            return res, active, total_iter, rounds, n_slack
        x = res.x[: problem.n_vars]
        viol = problem.A @ x - problem.b
        if with_slack:
            slack = np.zeros(problem.b.size)
            slack[np.flatnonzero(active)[problem.slack_cost[active] > 0]] = res.x[problem.n_vars:]
            viol = viol - slack
        new = (~active) & (viol > cfg.lazy_tol)
        if not new.any() or rounds >= cfg.max_rounds:
            return res, active, total_iter, rounds, n_slack
        active = active | np.isin(problem.block, problem.block[new])


def default_backend():
    """Bundled simplex with largest-coefficient pricing and a Harris ratio test."""
    return lpmod.SimplexBackend(lpmod.LpOptions(rule="dantzig"))


def solve(problem: MpcProblem, backend=None, hint=None) -> MpcSolution:
    """Solve the MPC LP; fall back to penalised grid slacks if infeasible.

    ``hint`` is a set of row keys (see :attr:`MpcSolution.active_keys`) to
    activate up front; it only affects speed, not the returned optimum.
    """
    backend = backend or default_backend()
    res, active, iters, rounds, _ = _solve_rows(problem, backend, False, hint)
    slack_used = 0.0
    if res.status == lpmod.INFEASIBLE:
        log.warning("MPC LP infeasible at k=%d; relaxing grid constraints", problem.k)
        res, active, it2, r2, n_slack = _solve_rows(problem, backend, True, hint)
        iters += it2
        rounds += r2
        if n_slack and res.status == lpmod.OPTIMAL:
            slack_used = float(np.sum(res.x[problem.n_vars:]))
    status = res.status
    H = problem.horizon
    if status in (lpmod.OPTIMAL, lpmod.ITERATION_LIMIT) and np.all(np.isfinite(res.x)):
        x = np.array(res.x[: problem.n_vars])
    else:
        x = np.zeros(problem.n_vars)
        x = np.clip(x, problem.lb, problem.ub)
    terms = objective_terms(problem, x)
    eps = problem.dispatch.value(x) - problem.eps_hat
    gcp = np.array([g.value(x) for g in problem.gcp])
    return MpcSolution(
        status=status,
        k=problem.k,
        k_end=problem.k_end,
        bess_p={n: x[c] for n, c in problem.bess_p.items()},
        bess_q={n: x[c] for n, c in problem.bess_q.items()},
        ev_p={s: x[c] for s, c in problem.ev_p.items()},
        objective=terms["total"] if status == lpmod.OPTIMAL else float("nan"),
        terms=terms,
        eps_hat=problem.eps_hat,
        eps=eps,
        gcp_p=gcp,
        x=x,
        iterations=iters,
        rounds=rounds,
        slack_used=slack_used,
        n_rows=int(np.count_nonzero(active)),
        active_keys={problem.keys[i] for i in np.flatnonzero(active & problem.lazy)},
    )
