"""Small MPC instances and an exhaustive-search reference objective."""

from dataclasses import dataclass

import numpy as np

from gridtrack.forecasting import ForecastSet, LoadSpec, horizon_end
from gridtrack.grid_model import build_network, linearize, solve_power_flow
from gridtrack.mpc_controller import DispatchPlan, MpcConfig, TrackingLedger, assemble
from gridtrack.resources import BessState, EvcsState, EvSession, Plug, bess_capability_polygon

from conftest import feeder_desc

DT = 30.0


@dataclass
class Case:
    net: object
    lin: object
    plan: DispatchPlan
    ledger: TrackingLedger
    forecasts: ForecastSet
    bess: list
    stations: list
    loads: list
    config: MpcConfig
    k: int

    def problem(self):
        return assemble(self.k, self.plan, self.ledger, self.forecasts, self.lin, self.bess, self.stations,
                        self.net, self.loads, (), self.config)


def make_case(k=8, load_kw=3.0, plan_kw=2.0, measured_kw=None, bess=None, ev=None, config=None,
              v_max=1.1, s_max=250.0):
    """Slack - N1 - N2 feeder, load at N2, optional BESS at N1 and EV at N2.

    ``ev`` is a dict of :class:`EvSession` overrides plus ``soc``/``last_p``.
    """
    desc = feeder_desc(n=2)
    desc["limits"]["v_max"] = v_max
    desc["limits"]["s_max_kva"] = s_max
    net = build_network(desc)
    k_end = horizon_end(k)
    H = k_end - k + 1
    loads = [LoadSpec("L", "N2", power_factor=0.95)]
    lp_f = np.full(H, float(load_kw))
    fc = ForecastSet(k, k_end, {"L": lp_f}, {"L": lp_f * np.tan(np.arccos(0.95))}, {}, {})
    op = solve_power_flow(net, [0.0, -lp_f[0]], [0.0, -lp_f[0] * np.tan(np.arccos(0.95))])
    lin = linearize(net, op)
    k0 = (k // 10) * 10
    if measured_kw is None:
        measured_kw = [plan_kw] * (k - k0)
    ledger = TrackingLedger(k, list(measured_kw))
    plan = DispatchPlan(np.full(288, float(plan_kw)))
    stations = []
    if ev is not None:
        ev = dict(ev)
        soc = ev.pop("soc", 0.5)
        last_p = ev.pop("last_p", 0.0)
        sess = dict(session_id="ev", station="E", plug=0, k_arrival=0, k_departure=k_end, soc_arrival=soc,
                    soc_target=0.6, e_max_kwh=2.0, p_min_kw=-1.0)
        sess.update(ev)
        s = EvSession(**sess)
        stations = [EvcsState("E", "N2", [Plug(-s.p_min_kw, s, soc, last_p), Plug(1.0)], max_active=2)]
    return Case(net, lin, plan, ledger, fc, list(bess or []), stations, loads, config or MpcConfig(), k)


def small_bess(soc=0.5, s=1.0, e=0.2, soc_min=0.2, soc_max=0.9, bus="N1"):
    return BessState("B", bus, soc, soc_min, soc_max, e, s)


def brute_force(case, step=0.1):
    """Best objective over a ``step`` grid for one BESS and one EV, horizon 2.

    Written from the model definition, not from the assembled LP: the GCP
    power comes from the linearization at the forecast injections, the SoC
    trajectories from the energy balance, the objective from its terms.
    """
    assert case.k % 10 == 8, "horizon of two steps"
    w = case.config.weights
    net, lin = case.net, case.lin
    b = case.bess[0]
    st = case.stations[0]
    plug = st.plugs[0]
    s = plug.session
    H = 2
    i_b = net.pq_index(b.bus)
    i_e = net.pq_index(st.bus)
    nb = net.n_buses - 1

    # GCP p0 and |v|,|i| at step j = base_j + gains @ [p_b, q_b, p_e]
    def maps(j):
        x = np.zeros(2 * nb)
        i_l = net.pq_index("N2")
        x[i_l] -= case.forecasts.load_p["L"][j]
        x[nb + i_l] -= case.forecasts.load_q["L"][j]
        base = np.concatenate([lin.A0[0] @ x + lin.b0[0:1], lin.Av @ x + lin.bv, lin.Ai @ x + lin.bi,
                               lin.A0[1] @ x + lin.b0[1:2]])
        full = np.vstack([lin.A0[0:1], lin.Av, lin.Ai, lin.A0[1:2]])
        gains = np.stack([full[:, i_b], full[:, nb + i_b], full[:, i_e]], axis=1)
        return base, gains

    mp = [maps(j) for j in range(H)]
    poly = bess_capability_polygon(b.s_max_kva, case.config.polygon_segments)
    gpoly = bess_capability_polygon(net.s_max_kva, case.config.gcp_segments)
    nv, nl = nb, net.n_lines

    pb = np.round(np.arange(-b.s_max_kva, b.s_max_kva + 1e-9, step), 10)
    qlo = max(-b.s_max_kva, b.q_kvar - case.config.q_trust_kvar)
    qhi = min(b.s_max_kva, b.q_kvar + case.config.q_trust_kvar)
    qb = np.round(np.arange(qlo, qhi + 1e-9, step), 10)
    pe = np.round(np.arange(s.p_min_kw, s.p_max_kw + 1e-9, step), 10)

    plan = case.plan.at(np.arange(case.k, case.k + H))
    eps_hat = DT / 3600.0 * float(np.sum(case.plan.at(np.arange(case.k - len(case.ledger.measured), case.k))
                                         - np.asarray(case.ledger.measured)))
    target = s.soc_target  # departs at the horizon end
    L = st.n_plugs
    best = np.inf
    Q0, Q1, E0, E1 = np.meshgrid(qb, qb, pe, pe, indexing="ij")
    Q0, Q1, E0, E1 = (a.ravel() for a in (Q0, Q1, E0, E1))
    ev_soc1 = plug.soc - E0 * DT / 3600 / s.e_max_kwh
    ev_soc2 = ev_soc1 - E1 * DT / 3600 / s.e_max_kwh
    ev_cap = max(s.soc_target, plug.soc) if case.config.ev_stop_at_target else 1.0
    ev_ok = (ev_soc1 >= -1e-12) & (ev_soc1 <= ev_cap + 1e-12) & (ev_soc2 >= -1e-12) & (ev_soc2 <= ev_cap + 1e-12)
    f_ev = 3600.0 / (DT * L) * np.maximum(target - ev_soc2, 0.0) + (np.abs(E0 - plug.last_p_kw) + np.abs(E1 - E0)) / L
    for p0 in pb:
        soc1 = b.soc - p0 * DT / 3600 / b.e_max_kwh
        if soc1 < b.soc_min - 1e-12 or soc1 > b.soc_max + 1e-12:
            continue
        for p1 in pb:
            soc2 = soc1 - p1 * DT / 3600 / b.e_max_kwh
            if soc2 < b.soc_min - 1e-12 or soc2 > b.soc_max + 1e-12:
                continue
            ok = ev_ok.copy()
            ok &= np.all(poly[:, :1] * p0 + poly[:, 1:2] * Q0[None] <= poly[:, 2:3] + 1e-12, axis=0)
            ok &= np.all(poly[:, :1] * p1 + poly[:, 1:2] * Q1[None] <= poly[:, 2:3] + 1e-12, axis=0)
            gcp = []
            for j, (P, Q, E) in enumerate(((p0, Q0, E0), (p1, Q1, E1))):
                base, g = mp[j]
                vals = base[:, None] + g[:, 0:1] * P + g[:, 1:2] * Q[None] + g[:, 2:3] * E[None]
                v = vals[1:1 + nv]
                cur = vals[1 + nv:1 + nv + nl]
                ok &= np.all(v <= net.v_max + 1e-12, axis=0) & np.all(v >= net.v_min - 1e-12, axis=0)
                ok &= np.all(cur <= net.ampacity[:, None] + 1e-12, axis=0)
                p_gcp, q_gcp = vals[0], vals[-1]
                ok &= np.all(gpoly[:, :1] * p_gcp + gpoly[:, 1:2] * q_gcp <= gpoly[:, 2:3] + 1e-9, axis=0)
                gcp.append(p_gcp)
            if not ok.any():
                continue
            eps = DT / 3600.0 * ((plan[0] - gcp[0]) + (plan[1] - gcp[1]))
            obj = w.dispatch * np.abs(eps + eps_hat) + w.evcs * f_ev + w.bess * (abs(p0) + abs(p1))
            best = min(best, float(np.min(obj[ok])))
    return best
