"""Closed-loop day simulation, metrics and run comparison."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import lp as lpmod
from ..forecasting import STEPS_PER_DAY, SLOTS_PER_DAY, STEPS_PER_SLOT, Measurements, forecast_all
from ..grid_model import linearize, solve_power_flow
from ..mpc_controller import DispatchPlan, MpcConfig, TrackingLedger, assemble, default_backend, incurred_error, restrict_first_step, solve
from ..resources import EvcsState, Plug, bess_capability_polygon, in_polygon
from .scenario import Scenario

log = logging.getLogger(__name__)

RUN_SCHEMA = "gridtrack.runrecord/1"
METRICS_SCHEMA = "gridtrack.metrics/1"
MODES = ("with-control", "without-control")
DT = 30.0


class SimulationError(RuntimeError):
    """The run aborted; ``k`` is the step index."""

    def __init__(self, message: str, k: int):
        super().__init__(f"step {k}: {message}")
        self.k = k


class RunRecordError(ValueError):
    def __init__(self, path, message: str, line: int | None = None):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.line = line


@dataclass
class RunRecord:
    header: dict
    steps: list
    summary: dict
    step_seconds: list = field(default_factory=list, repr=False)

    @property
    def plan(self) -> DispatchPlan:
        return DispatchPlan(self.header["plan_kw"])

    def series(self, key: str) -> np.ndarray:
        return np.array([s[key] for s in self.steps], dtype=float)

    @property
    def p0(self) -> np.ndarray:
        return self.series("p0_kw")

    def slot_error_kwh(self) -> np.ndarray:
        """Per-slot energy error (plan minus realized GCP power), kWh."""
        diff = self.plan.at(np.arange(len(self.steps))) - self.p0
        return diff.reshape(-1, STEPS_PER_SLOT).sum(axis=1) * DT / 3600.0

    def bess_soc(self, name: str) -> np.ndarray:
        return np.array([s["bess"][name]["soc"] for s in self.steps])

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps(self.header, sort_keys=True) + "\n")
            for s in self.steps:
                fh.write(json.dumps(s, sort_keys=True) + "\n")
            fh.write(json.dumps(self.summary, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "RunRecord":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(str(path))
        header, steps, summary = None, [], None
        with path.open() as fh:
            for n, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise RunRecordError(path, f"invalid JSON ({exc.msg}, column {exc.colno})", n) from None
                kind = obj.get("type") if isinstance(obj, dict) else None
                if kind == "header":
                    if header is not None or steps:
                        raise RunRecordError(path, "unexpected header", n)
                    if obj.get("schema") != RUN_SCHEMA:
                        raise RunRecordError(path, f"schema must be {RUN_SCHEMA!r}", n)
                    header = obj
                elif kind == "step":
                    if header is None:
                        raise RunRecordError(path, "step before header", n)
                    if obj.get("k") != len(steps):
                        raise RunRecordError(path, f"step k={obj.get('k')} out of sequence", n)
                    for key in ("p0_kw", "plan_kw"):
                        if not isinstance(obj.get(key), (int, float)):
                            raise RunRecordError(path, f"step lacks numeric {key!r}", n)
                    steps.append(obj)
                elif kind == "summary":
                    summary = obj
                else:
                    raise RunRecordError(path, f"unknown record type {kind!r}", n)
        if header is None:
            raise RunRecordError(path, "missing header")
        if len(steps) != STEPS_PER_DAY:
            raise RunRecordError(path, f"expected {STEPS_PER_DAY} steps, got {len(steps)}")
        return cls(header, steps, summary or {"type": "summary"})


@dataclass
class Metrics:
    rmse_kw: float
    aee_kwh: float
    mae_kw: float
    slot_error_kw: np.ndarray
    cdf_error_kw: np.ndarray
    cdf_prob: np.ndarray

    def abs_quantile(self, q: float) -> float:
        return float(np.quantile(np.abs(self.slot_error_kw), q))

    def to_dict(self) -> dict:
        return {
            "schema": METRICS_SCHEMA,
            "rmse_kw": self.rmse_kw,
            "aee_kwh": self.aee_kwh,
            "mae_kw": self.mae_kw,
            "p95_abs_error_kw": self.abs_quantile(0.95),
            "slot_error_kw": [float(v) for v in self.slot_error_kw],
            "cdf": {"error_kw": [float(v) for v in self.cdf_error_kw], "prob": [float(v) for v in self.cdf_prob]},
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")


def metrics_from_errors(e_y) -> Metrics:
    """RMSE, AEE, MAE and CDF of a 5-minute averaged error series (kW)."""
    e = np.asarray(e_y, dtype=float)
    if e.size == 0:
        raise ValueError("error series is empty")
    srt = np.sort(e)
    return Metrics(
        rmse_kw=float(np.sqrt(np.mean(e**2))),
        aee_kwh=float(np.sum(np.abs(e)) * 5.0 / 60.0),
        mae_kw=float(np.max(np.abs(e))),
        slot_error_kw=e,
        cdf_error_kw=srt,
        cdf_prob=np.arange(1, e.size + 1) / e.size,
    )


def compute_metrics(record: RunRecord, plan: DispatchPlan | None = None) -> Metrics:
    plan = plan or record.plan
    realized = record.p0.reshape(-1, STEPS_PER_SLOT).mean(axis=1)
    return metrics_from_errors(plan.values - realized)


def _stations(scen: Scenario) -> list:
    return [EvcsState(st.name, st.bus, [Plug(r) for r in st.plug_ratings_kw], st.max_active) for st in scen.stations]


def _clip_bess(b, p, q, poly):
    lo = (b.soc - b.soc_max) * b.e_max_kwh * 3600.0 / DT
    hi = (b.soc - b.soc_min) * b.e_max_kwh * 3600.0 / DT
    p2 = min(max(p, lo, -b.s_max_kva), hi, b.s_max_kva)
    q2 = min(max(q, -b.s_max_kva), b.s_max_kva)
    if not in_polygon(poly, p2, q2, 0.0):
        scale = min(1.0, float(np.min(poly[:, 2] / np.maximum(poly[:, 0] * p2 + poly[:, 1] * q2, 1e-300))))
        p2, q2 = p2 * scale, q2 * scale
    return p2, q2


def _clip_ev(s, soc, p):
    lo = max(s.p_min_kw, -(1.0 - soc) * s.e_max_kwh * 3600.0 / DT)
    hi = min(s.p_max_kw, soc * s.e_max_kwh * 3600.0 / DT)
    return min(max(p, lo), hi)


def _baseline_ev(s, soc, mode: str) -> float:
    need = max(s.soc_target - soc, 0.0) * s.e_max_kwh * 3600.0 / DT
    if mode == "pace":
        steps = s.k_departure - s.k_arrival + 1
        rate = max(s.soc_target - s.soc_arrival, 0.0) * s.e_max_kwh * 3600.0 / DT / steps
        return -min(rate, need, -s.p_min_kw)
    return -min(-s.p_min_kw, need)


def _injections(scen: Scenario, k: int, bess_sp: dict, ev_p: dict, ev_bus: dict, fc=None):
    """Nodal injections at step ``k``; loads and PV from the traces, or from ``fc[0]``."""
    net = scen.network
    nb = net.n_buses - 1
    p = np.zeros(nb)
    q = np.zeros(nb)
    tr = scen.traces
    for ld in scen.loads:
        i = net.pq_index(ld.bus)
        if fc is None:
            p[i] -= tr.load_p[ld.name][k]
            q[i] -= tr.load_q[ld.name][k]
        else:
            p[i] -= fc.load_p[ld.name][0]
            q[i] -= fc.load_q[ld.name][0]
    for pv in scen.pvs:
        i = net.pq_index(pv.bus)
        if fc is None:
            p[i] += tr.pv_p[pv.name][k]
        else:
            p[i] += fc.pv_p[pv.name][0]
            q[i] += fc.pv_q[pv.name][0]
    for b in scen.bess:
        bp, bq = bess_sp.get(b.name, (0.0, 0.0))
        i = net.pq_index(b.bus)
        p[i] += bp
        q[i] += bq
    for sid, val in ev_p.items():
        p[net.pq_index(ev_bus[sid])] += val
    return p, q


def run_day(
    scen: Scenario,
    mode: str = "with-control",
    seed: int | None = None,
    config: MpcConfig | None = None,
    backend=None,
    noise_std: float | None = None,
    perfect_forecast: bool | None = None,
    progress=None,
) -> RunRecord:
    """Simulate one day of 2880 steps and return the run record.

    With control, each step linearises the grid at the previous realised
    operating point, forecasts the horizon from the previous measurements,
    solves the MPC and actuates its first setpoints. Without control the
    BESS stays at 0 kW and EVs follow the scenario's uncoordinated baseline.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    cfg = config or MpcConfig()
    backend = backend or default_backend()
    seed = scen.seed if seed is None else int(seed)
    std = scen.noise_std_kw if noise_std is None else float(noise_std)
    perfect = scen.perfect_forecast if perfect_forecast is None else bool(perfect_forecast)
    rng = np.random.default_rng(seed)
    net = scen.network
    plan = scen.plan
    control = mode == "with-control"

    bess = {b.name: b for b in scen.bess}
    polys = {b.name: bess_capability_polygon(b.s_max_kva, cfg.polygon_segments) for b in scen.bess}
    stations = _stations(scen)
    st_by_name = {st.name: st for st in stations}
    ev_bus = {s.session_id: st_by_name[s.station].bus for s in scen.sessions}
    soc_ev: dict = {}
    last_p: dict = {}
    ev_final: dict = {}

    header = {
        "type": "header",
        "schema": RUN_SCHEMA,
        "scenario": scen.name,
        "mode": mode,
        "seed": seed,
        "noise_std_kw": std,
        "perfect_forecast": perfect,
        "plan_kw": [float(v) for v in plan.values],
        "bess_initial_soc": {n: b.soc for n, b in bess.items()},
        "weights": {"dispatch": cfg.weights.dispatch, "evcs": cfg.weights.evcs, "bess": cfg.weights.bess},
    }
    steps = []
    events = []
    timings = []
    prev_op = None
    prev_meas = None
    slot_meas: list = []
    hint: set = set()

    for k in range(STEPS_PER_DAY):
        t0 = time.perf_counter()
        if k % STEPS_PER_SLOT == 0:
            slot_meas = []
        for st in stations:
            for l, plug in enumerate(st.plugs):
                plug.session = None
                for s in scen.sessions:
                    if s.station == st.name and s.plug == l and s.connected(k):
                        if s.session_id not in soc_ev:
                            soc_ev[s.session_id] = s.soc_arrival
                            last_p[s.session_id] = 0.0
                        plug.session = s
                        plug.soc = soc_ev[s.session_id]
                        plug.last_p_kw = last_p[s.session_id]
        connected = [pl.session for st in stations for pl in st.plugs if pl.session is not None]

        rec = {"type": "step", "k": k, "plan_kw": float(plan.values[k // STEPS_PER_SLOT])}
        bess_sp: dict = {}
        ev_sp: dict = {}
        if control:
            fc = forecast_all(scen.loads, scen.pvs, scen.day_ahead, k, prev_meas, truth=scen.traces, perfect=perfect)
            if prev_op is None:
                nbi = net.n_buses - 1
                fp = np.zeros(nbi)
                fq = np.zeros(nbi)
                for ld in scen.loads:
                    fp[net.pq_index(ld.bus)] -= fc.load_p[ld.name][0]
                    fq[net.pq_index(ld.bus)] -= fc.load_q[ld.name][0]
                prev_op = solve_power_flow(net, fp, fq)
            lin = linearize(net, prev_op)
            ledger = TrackingLedger(k, list(slot_meas))
            prob = assemble(k, plan, ledger, fc, lin, list(bess.values()), stations, net, scen.loads, scen.pvs, cfg)
            sol = solve(prob, backend, hint)
            for _ in range(cfg.relinearize_passes):
                if sol.status != lpmod.OPTIMAL:
                    break
                b_sp, e_sp = sol.first()
                try:
                    guess = solve_power_flow(net, *_injections(scen, k, b_sp, e_sp, ev_bus, fc), v0=prev_op.v)
                except Exception:  # keep the plan from the last good linearization
                    break
                lin = linearize(net, guess)
                prob = assemble(k, plan, ledger, fc, lin, list(bess.values()), stations, net, scen.loads, scen.pvs,
                                cfg)
                restrict_first_step(prob, b_sp, e_sp, cfg.relinearize_trust_kw)
                nxt = solve(prob, backend, sol.active_keys)
                if nxt.status != lpmod.OPTIMAL:
                    break
                sol = nxt
            hint = sol.active_keys
            bess_sp, ev_sp = sol.first()
            rec.update(
                eps_hat_kwh=sol.eps_hat,
                eps_kwh=sol.eps,
                status=sol.status,
                terms={kk: float(v) for kk, v in sol.terms.items()},
                lp_rows=sol.n_rows,
                lp_rounds=sol.rounds,
            )
            if sol.status != lpmod.OPTIMAL:
                events.append({"k": k, "type": "solver", "status": sol.status})
            if sol.slack_used > 1e-9:
                events.append({"k": k, "type": "grid_slack", "value": sol.slack_used})
        else:
            ledger = TrackingLedger(k, list(slot_meas))
            rec["eps_hat_kwh"] = incurred_error(ledger, plan, DT)
            for s in connected:
                ev_sp[s.session_id] = _baseline_ev(s, soc_ev[s.session_id], scen.ev_baseline)

        # actuation with a final safety clip
        applied_b = {}
        for n, b in bess.items():
            p, q = bess_sp.get(n, (0.0, 0.0))
            p2, q2 = _clip_bess(b, p, q, polys[n])
            if abs(p2 - p) + abs(q2 - q) > 1e-6:
                events.append({"k": k, "type": "bess_clip", "resource": n, "p": p, "q": q})
            applied_b[n] = (p2, q2)
        applied_e = {}
        for s in connected:
            p = ev_sp.get(s.session_id, 0.0)
            p2 = _clip_ev(s, soc_ev[s.session_id], p)
            if abs(p2 - p) > 1e-6:
                events.append({"k": k, "type": "ev_clip", "session": s.session_id, "p": p})
            applied_e[s.session_id] = p2

        p_inj, q_inj = _injections(scen, k, applied_b, applied_e, ev_bus)
        try:
            op = solve_power_flow(net, p_inj, q_inj, v0=None if prev_op is None else prev_op.v)
        except Exception as exc:
            raise SimulationError(f"power flow failed: {exc}", k) from exc
        noise = rng.normal(0.0, std, 1 + len(scen.loads) + len(scen.pvs)) if std > 0 else np.zeros(
            1 + len(scen.loads) + len(scen.pvs))
        p0_meas = op.p0_kw + float(noise[0])
        slot_meas.append(p0_meas)
        tr = scen.traces
        prev_meas = Measurements(
            load_p={ld.name: float(tr.load_p[ld.name][k] + noise[1 + i]) for i, ld in enumerate(scen.loads)},
            pv_p={pv.name: float(tr.pv_p[pv.name][k] + noise[1 + len(scen.loads) + i]) for i, pv in enumerate(scen.pvs)},
            ghi=float(tr.ghi[k]),
            t_air=float(tr.t_air[k]),
        )
        prev_op = op

        vm = op.v_mag[1:]
        if vm.min() < net.v_min - 1e-9 or vm.max() > net.v_max + 1e-9:
            events.append({"k": k, "type": "voltage", "v_min": float(vm.min()), "v_max": float(vm.max())})
        if np.any(op.i_mag > net.ampacity + 1e-9):
            events.append({"k": k, "type": "ampacity", "line": net.line_ids[int(np.argmax(op.i_mag / net.ampacity))]})

        bess_out = {}
        for n, b in bess.items():
            p, q = applied_b[n]
            soc = b.soc - p * DT / 3600.0 / b.e_max_kwh
            if soc < b.soc_min - 1e-9 or soc > b.soc_max + 1e-9:
                raise SimulationError(f"BESS {n!r} SoC {soc:.6f} outside bounds", k)
            bess[n] = replace(b, soc=min(max(soc, b.soc_min), b.soc_max), q_kvar=float(q))
            bess_out[n] = {"p": p, "q": q, "soc": bess[n].soc}
        ev_out = {}
        for s in connected:
            sid = s.session_id
            p = applied_e[sid]
            soc = soc_ev[sid] - p * DT / 3600.0 / s.e_max_kwh
            if soc < -1e-9 or soc > 1.0 + 1e-9:
                raise SimulationError(f"EV {sid!r} SoC {soc:.6f} outside [0, 1]", k)
            soc_ev[sid] = min(max(soc, 0.0), 1.0)
            last_p[sid] = p
            ev_out[sid] = {"p": p, "soc": soc_ev[sid]}
            if k == s.k_departure:
                ev_final[sid] = soc_ev[sid]

        rec.update(
            p0_kw=op.p0_kw,
            q0_kvar=op.q0_kw,
            p0_meas_kw=p0_meas,
            v_min_pu=float(vm.min()),
            v_max_pu=float(vm.max()),
            i_max_pu=float(np.max(op.i_mag)) if op.i_mag.size else 0.0,
            bess=bess_out,
            ev=ev_out,
        )
        steps.append(rec)
        timings.append(time.perf_counter() - t0)
        if progress is not None:
            progress(k)

    record = RunRecord(header, steps, {}, timings)
    sessions = []
    for s in scen.sessions:
        sessions.append({
            "id": s.session_id,
            "station": s.station,
            "soc_final": ev_final.get(s.session_id, soc_ev.get(s.session_id, s.soc_arrival)),
            "soc_target": s.soc_target,
            "reachable": s.reachable(DT),
        })
    record.summary = {
        "type": "summary",
        "slot_error_kwh": [float(v) for v in record.slot_error_kwh()],
        "bess_final_soc": {n: b.soc for n, b in bess.items()},
        "sessions": sessions,
        "events": events,
    }
    return record


def run_chain(scenarios: list, mode: str = "with-control", **kwargs) -> list:
    """Run days back to back, carrying each BESS's final SoC into the next day."""
    records = []
    socs = None
    for scen in scenarios:
        if socs is not None:
            scen = scen.with_bess_soc(socs)
        rec = run_day(scen, mode, **kwargs)
        socs = rec.summary["bess_final_soc"]
        records.append(rec)
    return records


def compare(rec_a: RunRecord, rec_b: RunRecord) -> dict:
    """Side-by-side metrics of two runs and the ratio B/A for each statistic."""
    ma, mb = compute_metrics(rec_a), compute_metrics(rec_b)
    out = {"runs": {}, "ratio_b_over_a": {}}
    for label, rec, m in (("a", rec_a, ma), ("b", rec_b, mb)):
        out["runs"][label] = {
            "scenario": rec.header.get("scenario"),
            "mode": rec.header.get("mode"),
            "rmse_kw": m.rmse_kw,
            "aee_kwh": m.aee_kwh,
            "mae_kw": m.mae_kw,
            "p95_abs_error_kw": m.abs_quantile(0.95),
        }
    for key in ("rmse_kw", "aee_kwh", "mae_kw"):
        a = out["runs"]["a"][key]
        b = out["runs"]["b"][key]
        out["ratio_b_over_a"][key] = b / a if a > 0 else (math.inf if b > 0 else 1.0)
    out["cdf"] = {
        "a": {"error_kw": ma.cdf_error_kw.tolist(), "prob": ma.cdf_prob.tolist()},
        "b": {"error_kw": mb.cdf_error_kw.tolist(), "prob": mb.cdf_prob.tolist()},
    }
    return out
