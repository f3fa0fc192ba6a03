"""Scenario bundles: a directory holding the network, plan, traces and sessions.

Layout::

    scenario.json    config (schema ``gridtrack.scenario/1``)
    network.json     network with resources
    plan.csv         slot,p_kw            (288 rows)
    day_ahead.csv    slot,<load>...       (288 rows)
    traces.csv       k,ghi,t_air,load:<name>...,pv:<name>...   (2880 rows)
    sessions.json    list of EV sessions
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..forecasting import STEPS_PER_DAY, SLOTS_PER_DAY, LoadSpec, PvPlant, reactive_from_pf
from ..grid_model import NetworkError, NetworkModel, build_network
from ..mpc_controller import DispatchPlan
from ..resources import BessState, EvSession, check_concurrency

SCENARIO_SCHEMA = "gridtrack.scenario/1"


class ScenarioError(ValueError):
    """A scenario file is missing or malformed; ``line`` is 1-based when known."""

    def __init__(self, path, message: str, line: int | None = None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


@dataclass
class StationSpec:
    name: str
    bus: str
    plug_ratings_kw: tuple
    max_active: int = 2
    peak_kw: float | None = None


@dataclass
class Traces:
    """True 30-s realizations; loads and PV are positive kW."""

    ghi: np.ndarray
    t_air: np.ndarray
    load_p: dict
    load_q: dict
    pv_p: dict


@dataclass
class Scenario:
    name: str
    network: NetworkModel
    plan: DispatchPlan
    traces: Traces
    day_ahead: dict
    sessions: list
    bess: list
    stations: list
    loads: list
    pvs: list
    noise_std_kw: float = 0.1
    seed: int = 0
    perfect_forecast: bool = False
    ev_baseline: str = "max"
    root: Path | None = None
    extra: dict = field(default_factory=dict)

    def with_bess_soc(self, socs: dict) -> "Scenario":
        from dataclasses import replace

        bess = [replace(b, soc=float(socs.get(b.name, b.soc))) for b in self.bess]
        return replace(self, bess=bess)


def _read_json(path: Path):
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ScenarioError(path, f"cannot read: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(path, f"invalid JSON ({exc.msg}, column {exc.colno})", exc.lineno) from exc


def read_csv_columns(path: Path, expected_rows: int, index_col: str) -> dict:
    """Read a numeric CSV with a header into ``{column: array}``.

    The first column must be ``index_col`` counting ``0..expected_rows-1``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    cols: dict = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ScenarioError(path, "empty file", 1) from None
        header = [h.strip() for h in header]
        if not header or header[0] != index_col:
            raise ScenarioError(path, f"first column must be {index_col!r}", 1)
        if len(set(header)) != len(header):
            raise ScenarioError(path, "duplicate column name", 1)
        data = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ScenarioError(path, f"expected {len(header)} fields, got {len(row)}", line)
            try:
                vals = [float(c) for c in row]
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise ScenarioError(path, f"non-numeric value {bad!r}", line) from None
            if not all(math.isfinite(v) for v in vals):
                raise ScenarioError(path, "non-finite value", line)
            if int(vals[0]) != len(data) or vals[0] != int(vals[0]):
                raise ScenarioError(path, f"{index_col} {row[0]!r} out of sequence (expected {len(data)})", line)
            data.append(vals)
    if len(data) != expected_rows:
        raise ScenarioError(path, f"expected {expected_rows} data rows, got {len(data)}")
    arr = np.array(data, dtype=float)
    for j, name in enumerate(header):
        cols[name] = arr[:, j]
    return cols


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_csv_columns(path: Path, index_col: str, columns: dict, n: int) -> None:
    path = Path(path)
    names = list(columns)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([index_col] + names)
        for i in range(n):
            w.writerow([i] + [repr(float(columns[c][i])) for c in names])


def load_plan(path) -> DispatchPlan:
    cols = read_csv_columns(Path(path), SLOTS_PER_DAY, "slot")
    if "p_kw" not in cols:
        raise ScenarioError(path, "missing column 'p_kw'", 1)
    return DispatchPlan(cols["p_kw"])


def step_index(value, path, what: str) -> int:
    """A 30-s index from an int or a time of day (``HH:MM[:SS]`` or ISO-8601)."""
    if isinstance(value, bool):
        raise ScenarioError(path, f"{what}: expected index or time, got {value!r}")
    if isinstance(value, (int, float)):
        if value != int(value):
            raise ScenarioError(path, f"{what}: index {value!r} is not an integer")
        return int(value)
    try:
        t = _dt.time.fromisoformat(str(value))
    except ValueError:
        try:
            t = _dt.datetime.fromisoformat(str(value)).time()
        except ValueError:
            raise ScenarioError(path, f"{what}: cannot parse time {value!r}") from None
    return (t.hour * 3600 + t.minute * 60 + t.second) // 30


def _sessions(path: Path, stations: dict) -> list:
    raw = _read_json(path)
    if not isinstance(raw, list):
        raise ScenarioError(path, "expected a list of sessions")
    out = []
    for n, r in enumerate(raw):
        where = f"sessions[{n}]"
        try:
            st = stations[r["station"]]
            plug = int(r["plug"])
            if not 0 <= plug < len(st.plug_ratings_kw):
                raise ScenarioError(path, f"{where}: plug {plug} does not exist on {st.name!r}")
            rating = float(st.plug_ratings_kw[plug])
            vehicle = float(r.get("vehicle_max_kw", rating))
            p_min = float(r.get("p_min_kw", -min(rating, vehicle)))
            s = EvSession(
                session_id=str(r["id"]),
                station=st.name,
                plug=plug,
                k_arrival=step_index(r["arrival"], path, f"{where}.arrival"),
                k_departure=step_index(r["departure"], path, f"{where}.departure"),
                soc_arrival=float(r["soc_arrival"]),
                soc_target=float(r["soc_target"]),
                e_max_kwh=float(r["e_max_kwh"]),
                p_min_kw=p_min,
                p_max_kw=float(r.get("p_max_kw", 0.0)),
            )
        except KeyError as exc:
            raise ScenarioError(path, f"{where}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(path, f"{where}: {exc}") from None
        if not 0 <= s.k_arrival < s.k_departure < STEPS_PER_DAY:
            raise ScenarioError(path, f"{where}: session must lie within the day")
        out.append(s)
    ids = [s.session_id for s in out]
    if len(set(ids)) != len(ids):
        raise ScenarioError(path, "duplicate session id")
    for st in stations.values():
        try:
            check_concurrency(out, st.name, len(st.plug_ratings_kw), st.max_active)
        except ValueError as exc:
            raise ScenarioError(path, str(exc)) from None
    return out


def resolve_scenario_path(ref) -> Path:
    """Accept a bundle directory, its ``scenario.json`` or a bundled name like ``day1``."""
    p = Path(ref)
    if p.is_dir():
        p = p / "scenario.json"
    if p.exists():
        return p
    name = str(ref)
    for suffix in (".scenario", ".json"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    if name.startswith("bundled-"):
        name = name[len("bundled-"):]
    bundled = bundled_dir() / name / "scenario.json"
    if bundled.exists():
        return bundled
    raise FileNotFoundError(str(ref))


def bundled_dir() -> Path:
    return Path(__file__).resolve().parent.parent / "data" / "scenarios"


def load_scenario(ref) -> Scenario:
    """Load and validate a scenario bundle."""
    path = resolve_scenario_path(ref)
    root = path.parent
    cfg = _read_json(path)
    if cfg.get("schema") != SCENARIO_SCHEMA:
        raise ScenarioError(path, f"schema must be {SCENARIO_SCHEMA!r}")
    files = cfg.get("files", {})

    def f(key, default):
        return root / files.get(key, default)

    net_path = f("network", "network.json")
    if not net_path.exists():
        raise FileNotFoundError(str(net_path))
    desc = _read_json(net_path)
    try:
        net = build_network(desc)
    except NetworkError as exc:
        raise ScenarioError(net_path, str(exc)) from None

    bess, stations, loads, pvs = [], {}, [], []
    for r in net.resources:
        p = r.params
        try:
            if r.kind == "bess":
                bess.append(
                    BessState(r.name, r.bus, float(p.get("soc", 0.5)), float(p.get("soc_min", 0.0)),
                              float(p.get("soc_max", 1.0)), float(p["e_max_kwh"]), float(p["s_max_kva"]))
                )
            elif r.kind == "evcs":
                stations[r.name] = StationSpec(r.name, r.bus, tuple(float(x) for x in p["plugs_kw"]),
                                               int(p.get("max_active", 2)), p.get("peak_kw"))
            elif r.kind == "pv":
                pvs.append(PvPlant(r.name, r.bus, float(p["p_rated_kw"]), float(p.get("gamma", -0.004)),
                                   float(p.get("noct", 45.0))))
            elif r.kind == "load":
                loads.append(LoadSpec(r.name, r.bus, float(p.get("power_factor", 0.95))))
            else:
                raise ScenarioError(net_path, f"resource {r.name!r}: unknown kind {r.kind!r}")
        except KeyError as exc:
            raise ScenarioError(net_path, f"resource {r.name!r}: missing {exc.args[0]!r}") from None
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(net_path, str(exc)) from None

    init = cfg.get("bess_soc", {})
    for name in init:
        if name not in [b.name for b in bess]:
            raise ScenarioError(path, f"bess_soc: unknown BESS {name!r}")

    plan = load_plan(f("plan", "plan.csv"))
    try:
        plan.check_capacity(net.s_max_kva)
    except ValueError as exc:
        raise ScenarioError(f("plan", "plan.csv"), str(exc)) from None

    da_path = f("day_ahead", "day_ahead.csv")
    da = read_csv_columns(da_path, SLOTS_PER_DAY, "slot")
    for ld in loads:
        if ld.name not in da:
            raise ScenarioError(da_path, f"missing column {ld.name!r}", 1)

    tr_path = f("traces", "traces.csv")
    tr = read_csv_columns(tr_path, STEPS_PER_DAY, "k")
    needed = ["ghi", "t_air"] + [f"load:{ld.name}" for ld in loads] + [f"pv:{pv.name}" for pv in pvs]
    for col in needed:
        if col not in tr:
            raise ScenarioError(tr_path, f"missing column {col!r}", 1)
    if np.any(tr["ghi"] < 0):
        raise ScenarioError(tr_path, f"negative GHI", int(np.argmax(tr["ghi"] < 0)) + 2)
    traces = Traces(
        ghi=tr["ghi"],
        t_air=tr["t_air"],
        load_p={ld.name: tr[f"load:{ld.name}"] for ld in loads},
        load_q={ld.name: reactive_from_pf(tr[f"load:{ld.name}"], ld.power_factor) for ld in loads},
        pv_p={pv.name: tr[f"pv:{pv.name}"] for pv in pvs},
    )

    sess_path = f("sessions", "sessions.json")
    sessions = _sessions(sess_path, stations) if sess_path.exists() else []

    scen = Scenario(
        name=str(cfg.get("name", root.name)),
        network=net,
        plan=plan,
        traces=traces,
        day_ahead={ld.name: da[ld.name] for ld in loads},
        sessions=sessions,
        bess=bess,
        stations=list(stations.values()),
        loads=loads,
        pvs=pvs,
        noise_std_kw=float(cfg.get("noise_std_kw", 0.1)),
        seed=int(cfg.get("seed", 0)),
        perfect_forecast=bool(cfg.get("perfect_forecast", False)),
        ev_baseline=str(cfg.get("ev_baseline", "max")),
        root=root,
    )
    if scen.ev_baseline not in ("max", "pace"):
        raise ScenarioError(path, f"ev_baseline must be 'max' or 'pace', got {scen.ev_baseline!r}")
    return scen.with_bess_soc(init) if init else scen


def load_chain(path) -> list:
    """A ``chain.json`` lists scenario bundles (relative paths) run back to back."""
    path = Path(path)
    cfg = _read_json(path)
    days = cfg.get("days")
    if not isinstance(days, list) or not days:
        raise ScenarioError(path, "'days' must be a non-empty list")
    return [load_scenario(path.parent / d) for d in days]
