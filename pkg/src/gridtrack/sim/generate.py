"""Synthetic scenario bundles on an ELL-like low-voltage network.

All traces are synthetic and seeded. The dispatch plan is built the way a
day-ahead stage would: AC power flow of smoothed (day-ahead) load and PV
with EVs charging at a constant pace to their target and BESS idle,
averaged per 5-minute slot.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ..forecasting import STEPS_PER_DAY, SLOTS_PER_DAY, STEPS_PER_SLOT, PvPlant, pv_power, reactive_from_pf
from ..grid_model import build_network, solve_power_flow
from .scenario import SCENARIO_SCHEMA, bundled_dir, write_csv_columns

HEAVY = {"r": 0.004, "x": 0.002, "ampacity": 3.0}
LIGHT = {"r": 0.01, "x": 0.004, "ampacity": 1.5}

# (from, to, kind)
_LINES = [
    ("B01", "B02", {"r": 0.0015, "x": 0.006, "ampacity": 6.3}),
    ("B02", "B03", LIGHT), ("B03", "B04", LIGHT),
    ("B02", "B05", LIGHT), ("B05", "B06", LIGHT), ("B06", "B07", LIGHT),
    ("B02", "B08", HEAVY), ("B08", "B09", HEAVY), ("B09", "B10", HEAVY),
    ("B02", "B11", HEAVY), ("B11", "B12", HEAVY),
    ("B02", "B13", LIGHT), ("B13", "B14", LIGHT),
    ("B13", "B15", LIGHT), ("B15", "B16", LIGHT),
    ("B02", "B17", LIGHT), ("B17", "B18", LIGHT), ("B18", "B19", LIGHT), ("B19", "B20", LIGHT),
    ("B19", "B21", LIGHT),
]


def ell_network(bess_soc=(0.5, 0.5)) -> dict:
    """Declarative description of the bundled 21-bus network."""
    buses = [{"id": "B01", "type": "slack"}] + [{"id": f"B{i:02d}", "type": "PQ"} for i in range(2, 22)]
    lines = [{"id": f"L{f[1:]}-{t[1:]}", "from": f, "to": t, **z} for f, t, z in _LINES]
    resources = [
        {"name": "BESS1", "kind": "bess", "bus": "B04", "e_max_kwh": 25.0, "s_max_kva": 25.0,
         "soc_min": 0.2, "soc_max": 0.9, "soc": bess_soc[0]},
        {"name": "BESS2", "kind": "bess", "bus": "B10", "e_max_kwh": 300.0, "s_max_kva": 150.0,
         "soc_min": 0.2, "soc_max": 0.9, "soc": bess_soc[1]},
        {"name": "EVCS1", "kind": "evcs", "bus": "B12", "plugs_kw": [43.0, 22.0, 150.0, 150.0, 150.0],
         "max_active": 2, "peak_kw": 172.0},
        {"name": "EVCS2", "kind": "evcs", "bus": "B07", "plugs_kw": [22.0, 22.0, 10.0],
         "max_active": 2, "peak_kw": 32.0},
        {"name": "PV1", "kind": "pv", "bus": "B14", "p_rated_kw": 13.0},
        {"name": "PV2", "kind": "pv", "bus": "B16", "p_rated_kw": 16.0},
        {"name": "PV3", "kind": "pv", "bus": "B16", "p_rated_kw": 13.2},
        {"name": "ELLA", "kind": "load", "bus": "B20", "power_factor": 0.95},
        {"name": "ELLB", "kind": "load", "bus": "B21", "power_factor": 0.95},
    ]
    return {
        "name": "ell-like",
        "base": {"s_kva": 100.0, "v_v": 400.0},
        "slack_voltage": 1.0,
        "limits": {"v_min": 0.95, "v_max": 1.05, "s_max_kva": 630.0},
        "buses": buses,
        "lines": lines,
        "resources": resources,
    }


# day profiles ------------------------------------------------------------

DAYS = {
    "day1": {"seed": 11, "weekday": True, "sky": "cloudy", "title": "cloudy weekday, volatile PV"},
    "day2": {"seed": 12, "weekday": False, "sky": "rainy", "title": "rainy weekend, low PV"},
    "day3": {"seed": 13, "weekday": True, "sky": "clear", "title": "clear weekday"},
    "day4": {"seed": 14, "weekday": True, "sky": "cloudy", "title": "broken-cloud weekday"},
}

SESSIONS = {
    "day1": [
        {"id": "d1-s1", "station": "EVCS1", "plug": 2, "arrival": "08:10:00", "departure": "10:30:00",
         "soc_arrival": 0.25, "soc_target": 0.8, "e_max_kwh": 60.0, "vehicle_max_kw": 50.0},
        {"id": "d1-s2", "station": "EVCS1", "plug": 0, "arrival": "09:00:00", "departure": "17:30:00",
         "soc_arrival": 0.3, "soc_target": 0.9, "e_max_kwh": 75.0, "vehicle_max_kw": 22.0},
        {"id": "d1-s3", "station": "EVCS1", "plug": 3, "arrival": "13:05:00", "departure": "14:20:00",
         "soc_arrival": 0.2, "soc_target": 0.75, "e_max_kwh": 50.0, "vehicle_max_kw": 60.0},
        {"id": "d1-s4", "station": "EVCS1", "plug": 1, "arrival": "15:00:00", "departure": "18:40:00",
         "soc_arrival": 0.4, "soc_target": 0.8, "e_max_kwh": 40.0, "vehicle_max_kw": 11.0},
        {"id": "d1-s5", "station": "EVCS2", "plug": 0, "arrival": "08:30:00", "departure": "16:45:00",
         "soc_arrival": 0.35, "soc_target": 0.85, "e_max_kwh": 40.0, "vehicle_max_kw": 11.0},
        {"id": "d1-s6", "station": "EVCS2", "plug": 2, "arrival": "10:00:00", "departure": "12:30:00",
         "soc_arrival": 0.5, "soc_target": 0.8, "e_max_kwh": 30.0, "vehicle_max_kw": 7.0},
    ],
    "day2": [
        {"id": "d2-s1", "station": "EVCS1", "plug": 3, "arrival": "10:15:00", "departure": "11:45:00",
         "soc_arrival": 0.3, "soc_target": 0.8, "e_max_kwh": 55.0, "vehicle_max_kw": 50.0},
        {"id": "d2-s2", "station": "EVCS1", "plug": 0, "arrival": "14:00:00", "departure": "17:00:00",
         "soc_arrival": 0.4, "soc_target": 0.85, "e_max_kwh": 40.0, "vehicle_max_kw": 22.0},
    ],
    "day3": [
        {"id": "d3-s1", "station": "EVCS1", "plug": 4, "arrival": "07:45:00", "departure": "09:15:00",
         "soc_arrival": 0.2, "soc_target": 0.7, "e_max_kwh": 64.0, "vehicle_max_kw": 45.0},
        {"id": "d3-s2", "station": "EVCS2", "plug": 1, "arrival": "08:50:00", "departure": "17:10:00",
         "soc_arrival": 0.3, "soc_target": 0.9, "e_max_kwh": 58.0, "vehicle_max_kw": 11.0},
        {"id": "d3-s3", "station": "EVCS1", "plug": 0, "arrival": "12:00:00", "departure": "15:30:00",
         "soc_arrival": 0.45, "soc_target": 0.8, "e_max_kwh": 40.0, "vehicle_max_kw": 22.0},
    ],
    "day4": [
        {"id": "d4-s1", "station": "EVCS1", "plug": 2, "arrival": "09:30:00", "departure": "11:00:00",
         "soc_arrival": 0.3, "soc_target": 0.8, "e_max_kwh": 77.0, "vehicle_max_kw": 70.0},
        {"id": "d4-s2", "station": "EVCS2", "plug": 0, "arrival": "08:15:00", "departure": "16:00:00",
         "soc_arrival": 0.4, "soc_target": 0.9, "e_max_kwh": 40.0, "vehicle_max_kw": 7.0},
        {"id": "d4-s3", "station": "EVCS1", "plug": 1, "arrival": "13:30:00", "departure": "16:45:00",
         "soc_arrival": 0.25, "soc_target": 0.7, "e_max_kwh": 50.0, "vehicle_max_kw": 22.0},
    ],
}


def _hours() -> np.ndarray:
    return np.arange(STEPS_PER_DAY) * 30.0 / 3600.0


def _ar1(rng, n, phi, sigma):
    out = np.zeros(n)
    e = rng.normal(0.0, sigma, n)
    for i in range(1, n):
        out[i] = phi * out[i - 1] + e[i]
    return out


def _smooth(x, width):
    """Centered moving average with edge padding."""
    pad = width // 2
    xp = np.pad(x, (pad, width - 1 - pad), mode="edge")
    return np.convolve(xp, np.ones(width) / width, mode="valid")


def synth_weather(rng, sky: str):
    h = _hours()
    sunrise, sunset, peak = 6.8, 18.8, {"clear": 820.0, "cloudy": 780.0, "rainy": 380.0}[sky]
    x = np.clip((h - sunrise) / (sunset - sunrise), 0.0, 1.0)
    clear = peak * np.sin(np.pi * x) ** 1.3
    n = h.size
    if sky == "clear":
        factor = 0.97 + 0.02 * np.tanh(_ar1(rng, n, 0.995, 0.01))
    elif sky == "cloudy":
        # two-state cloud process with fast edges
        state = np.zeros(n)
        s = 1.0
        for i in range(n):
            if rng.random() < 0.03:
                s = 1.0 - s
            state[i] = s
        depth = 0.25 + 0.15 * _ar1(rng, n, 0.99, 0.05)
        factor = np.clip(np.where(state > 0.5, 1.0, depth) + _ar1(rng, n, 0.9, 0.02), 0.1, 1.05)
        factor = _smooth(factor, 3)
    else:
        factor = np.clip(0.35 + _ar1(rng, n, 0.995, 0.03), 0.1, 0.7)
    ghi = np.clip(clear * factor, 0.0, None)
    t_air = 11.0 + 5.0 * np.sin(np.pi * (h - 9.0) / 12.0) + _ar1(rng, n, 0.999, 0.02)
    return ghi, t_air


def synth_load(rng, peak_kw: float, weekday: bool):
    h = _hours()
    base = 0.25 * peak_kw
    if weekday:
        occ = 1.0 / (1.0 + np.exp(-(h - 8.0) * 3.0)) * 1.0 / (1.0 + np.exp((h - 18.0) * 2.5))
        shape = base + (0.7 * peak_kw) * occ * (0.85 + 0.15 * np.sin(np.pi * (h - 8.0) / 10.0))
    else:
        shape = base + 0.1 * peak_kw * np.exp(-((h - 13.0) / 3.0) ** 2)
    noise = _ar1(rng, h.size, 0.97, 0.015 * peak_kw)
    spikes = (rng.random(h.size) < 0.004) * rng.uniform(0.05, 0.15, h.size) * peak_kw
    spikes = _smooth(spikes, 6) * 6 * 0.5
    return np.clip(shape + noise + spikes, 0.05 * peak_kw, 1.2 * peak_kw)


def _slot_mean(x):
    return x.reshape(SLOTS_PER_DAY, STEPS_PER_SLOT).mean(axis=1)


def ev_pace(session: dict, stations: dict) -> tuple:
    """(k_a, k_f, rate_kw) of the constant-pace charging profile."""
    from .scenario import step_index

    ka = step_index(session["arrival"], "sessions", "arrival")
    kf = step_index(session["departure"], "sessions", "departure")
    rating = min(stations[session["station"]][session["plug"]], session.get("vehicle_max_kw", math.inf))
    energy = (session["soc_target"] - session["soc_arrival"]) * session["e_max_kwh"]
    rate = min(energy * 3600.0 / 30.0 / (kf - ka + 1), rating)
    return ka, kf, rate


def build_plan(desc: dict, day_ahead_load: dict, pv_da: dict, sessions: list) -> np.ndarray:
    """Slot-average GCP power from AC power flow of the day-ahead injections."""
    net = build_network(desc)
    stations = {r["name"]: r["plugs_kw"] for r in desc["resources"] if r["kind"] == "evcs"}
    evbus = {r["name"]: r["bus"] for r in desc["resources"] if r["kind"] == "evcs"}
    kinds = {r["name"]: r for r in desc["resources"]}
    ev = np.zeros((STEPS_PER_DAY, net.n_buses - 1))
    for s in sessions:
        ka, kf, rate = ev_pace(s, stations)
        ev[ka:kf + 1, net.pq_index(evbus[s["station"]])] -= rate
    plan = np.zeros(SLOTS_PER_DAY)
    v0 = None
    for y in range(SLOTS_PER_DAY):
        p = ev[y * STEPS_PER_SLOT:(y + 1) * STEPS_PER_SLOT].mean(axis=0).copy()
        q = np.zeros(net.n_buses - 1)
        for name, prof in day_ahead_load.items():
            i = net.pq_index(kinds[name]["bus"])
            p[i] -= prof[y]
            q[i] -= float(reactive_from_pf(prof[y], kinds[name].get("power_factor", 0.95)))
        for name, prof in pv_da.items():
            p[net.pq_index(kinds[name]["bus"])] += prof[y]
        op = solve_power_flow(net, p, q, v0=v0)
        v0 = op.v
        plan[y] = op.p0_kw
    return plan


def generate_day(name: str, out_dir: Path, perfect: bool = False, noise_std: float = 0.1) -> Path:
    """Write one bundled day to ``out_dir/name``."""
    spec = DAYS[name]
    rng = np.random.default_rng(spec["seed"])
    desc = ell_network()
    ghi, t_air = synth_weather(rng, spec["sky"])
    loads = {"ELLA": synth_load(rng, 20.0, spec["weekday"]), "ELLB": synth_load(rng, 5.0, spec["weekday"])}
    pvs = {}
    for r in desc["resources"]:
        if r["kind"] == "pv":
            pvs[r["name"]] = pv_power(ghi, t_air, PvPlant(r["name"], r["bus"], r["p_rated_kw"]))
    # day-ahead: one-hour smoothed truth, averaged per slot
    da_load = {n: _slot_mean(_smooth(v, 120)) for n, v in loads.items()}
    da_pv = {n: _slot_mean(_smooth(v, 120)) for n, v in pvs.items()}
    sessions = SESSIONS[name]
    plan = build_plan(desc, da_load, da_pv, sessions)

    d = Path(out_dir) / name
    d.mkdir(parents=True, exist_ok=True)
    (d / "network.json").write_text(json.dumps(desc, indent=1) + "\n")
    (d / "sessions.json").write_text(json.dumps(sessions, indent=1) + "\n")
    write_csv_columns(d / "plan.csv", "slot", {"p_kw": plan}, SLOTS_PER_DAY)
    write_csv_columns(d / "day_ahead.csv", "slot", da_load, SLOTS_PER_DAY)
    cols = {"ghi": ghi, "t_air": t_air}
    cols.update({f"load:{n}": v for n, v in loads.items()})
    cols.update({f"pv:{n}": v for n, v in pvs.items()})
    write_csv_columns(d / "traces.csv", "k", cols, STEPS_PER_DAY)
    cfg = {
        "schema": SCENARIO_SCHEMA,
        "name": name,
        "description": f"synthetic {spec['title']}",
        "synthetic": True,
        "seed": spec["seed"],
        "noise_std_kw": noise_std,
        "perfect_forecast": perfect,
        "ev_baseline": "max",
    }
    (d / "scenario.json").write_text(json.dumps(cfg, indent=1) + "\n")
    return d


def generate_all(out_dir: Path | None = None) -> list:
    out_dir = Path(out_dir) if out_dir else bundled_dir()
    paths = [generate_day(n, out_dir) for n in DAYS]
    (out_dir / "chain4.json").write_text(json.dumps({"days": ["day1", "day2", "day3", "day4"]}, indent=1) + "\n")
    return paths


if __name__ == "__main__":
    for p in generate_all():
        print(p)
