"""Command-line entry point: ``gridtrack run|metrics|linearize|compare``.

Exit status is 0 on success, 2 when an input file does not exist (or on a
usage error), 1 when an input file is malformed and 3 when a simulation
aborts.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .grid_model import NetworkError, PowerFlowError, SingularJacobianError, linearize, load_network, solve_power_flow
from .sim import harness
from .sim.scenario import ScenarioError, bundled_dir, load_chain, load_scenario

EXIT_OK = 0
EXIT_MALFORMED = 1
EXIT_MISSING = 2
EXIT_SIMULATION = 3


class InputError(ValueError):
    """Malformed user input, already carrying a ``path:line:`` prefix."""


def _fail(code: int, msg: str) -> int:
    print(f"gridtrack: error: {msg}", file=sys.stderr)
    return code


def _chain_path(ref: str) -> Path | None:
    p = Path(ref)
    if p.is_file() and p.suffix == ".json":
        try:
            if "days" in json.loads(p.read_text()):
                return p
        except (json.JSONDecodeError, TypeError):
            return None
    name = ref.removesuffix(".json").removeprefix("bundled-")
    cand = bundled_dir() / f"{name}.json"
    if not p.exists() and cand.is_file():
        return cand
    return None


def read_injections(path, net) -> tuple:
    """Read ``bus,p_kw,q_kvar`` rows into injection vectors over the non-slack buses.

    Buses that are not listed inject nothing.
    """
    path = Path(path)
    p = np.zeros(net.n_buses - 1)
    q = np.zeros(net.n_buses - 1)
    with path.open(newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None:
            raise InputError(f"{path}:1: empty file")
        if [h.strip() for h in header] != ["bus", "p_kw", "q_kvar"]:
            raise InputError(f"{path}:1: header must be 'bus,p_kw,q_kvar', got {','.join(header)!r}")
        seen = set()
        for row in rows:
            n = rows.line_num
            if not row or not "".join(row).strip():
                continue
            if len(row) != 3:
                raise InputError(f"{path}:{n}: expected 3 fields, got {len(row)}")
            bus = row[0].strip()
            try:
                i = net.pq_index(bus)
            except KeyError as exc:
                raise InputError(f"{path}:{n}: {exc.args[0]}") from None
            if bus in seen:
                raise InputError(f"{path}:{n}: bus {bus!r} listed twice")
            seen.add(bus)
            try:
                p[i], q[i] = float(row[1]), float(row[2])
            except ValueError:
                raise InputError(f"{path}:{n}: non-numeric power value") from None
            if not (np.isfinite(p[i]) and np.isfinite(q[i])):
                raise InputError(f"{path}:{n}: power values must be finite")
    return p, q


def _runs(ref: str):
    chain = _chain_path(ref)
    if chain is not None:
        return load_chain(chain), True
    return [load_scenario(ref)], False


def cmd_run(args) -> int:
    scens, chained = _runs(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    modes = harness.MODES if args.mode == "both" else (args.mode,)
    kw = {"seed": args.seed, "noise_std": args.noise_std}
    if args.perfect_forecast:
        kw["perfect_forecast"] = True
    for mode in modes:
        if chained:
            records = harness.run_chain(scens, mode, **kw)
        else:
            records = [harness.run_day(scens[0], mode, **kw)]
        for rec in records:
            stem = f"{rec.header['scenario']}.{mode}"
            rec_path = out / f"{stem}.runrecord.jsonl"
            met_path = out / f"{stem}.metrics.json"
            rec.to_jsonl(rec_path)
            m = harness.compute_metrics(rec)
            m.write(met_path)
            n_ev = len(rec.summary["events"])
            print(f"{stem}: rmse {m.rmse_kw:.3f} kW  aee {m.aee_kwh:.3f} kWh  mae {m.mae_kw:.3f} kW  "
                  f"events {n_ev}  -> {rec_path}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    rec = harness.RunRecord.from_jsonl(args.runrecord)
    m = harness.compute_metrics(rec)
    if args.out:
        m.write(args.out)
    d = m.to_dict()
    if not args.full:
        d.pop("slot_error_kw")
        d.pop("cdf")
    print(json.dumps(d, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_linearize(args) -> int:
    net = load_network(args.network)
    p, q = read_injections(args.injections, net)
    op = solve_power_flow(net, p, q)
    lin = linearize(net, op)
    doc = {
        "schema": "gridtrack.linearization/1",
        "network": net.name,
        "buses": list(net.pq_ids),
        "lines": list(net.line_ids),
        "operating_point": {
            "v_mag_pu": op.v_mag.tolist(),
            "i_mag_pu": op.i_mag.tolist(),
            "p0_kw": op.p0_kw,
            "q0_kvar": op.q0_kw,
            "iterations": op.iterations,
        },
        "Av": lin.Av.tolist(),
        "bv": lin.bv.tolist(),
        "Ai": lin.Ai.tolist(),
        "bi": lin.bi.tolist(),
        "A0": lin.A0.tolist(),
        "b0": lin.b0.tolist(),
    }
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"{net.name}: {len(net.pq_ids)} buses, {net.n_lines} lines, p0 {op.p0_kw:.3f} kW -> {args.out}")
    else:
        print(text)
    return EXIT_OK


def cmd_compare(args) -> int:
    a = harness.RunRecord.from_jsonl(args.run_a)
    b = harness.RunRecord.from_jsonl(args.run_b)
    res = harness.compare(a, b)
    ra, rb = res["runs"]["a"], res["runs"]["b"]
    rows = [("RMSE (kW)", "rmse_kw"), ("AEE (kWh)", "aee_kwh"), ("MAE (kW)", "mae_kw"), ("|e| p95 (kW)", "p95_abs_error_kw")]
    la = f"A: {ra['scenario']} {ra['mode']}"
    lb = f"B: {rb['scenario']} {rb['mode']}"
    w = max(len(la), len(lb), 12)
    print(f"{'':14s}{la:>{w}s}  {lb:>{w}s}  {'B/A':>8s}")
    for label, key in rows:
        ratio = res["ratio_b_over_a"].get(key)
        rtxt = f"{ratio:8.3f}" if ratio is not None else f"{'':8s}"
        print(f"{label:14s}{ra[key]:>{w}.3f}  {rb[key]:>{w}.3f}  {rtxt}")
    if args.cdf:
        Path(args.cdf).write_text(json.dumps(res["cdf"], indent=1) + "\n")
        print(f"CDF data -> {args.cdf}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridtrack", description="Dispatch-plan tracking with grid-aware MPC")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario day (or a chain.json of days)")
    r.add_argument("scenario", help="bundle dir, scenario.json, chain.json or bundled name (e.g. bundled-day1.scenario)")
    r.add_argument("--mode", choices=(*harness.MODES, "both"), default="with-control")
    r.add_argument("--seed", type=int, default=None, help="override the scenario's noise seed")
    r.add_argument("--noise-std", type=float, default=None, help="measurement noise std, kW")
    r.add_argument("--perfect-forecast", action="store_true", help="forecast with the true traces")
    r.add_argument("--out", default=".", help="output directory (default: cwd)")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("metrics", help="tracking metrics of a run record")
    m.add_argument("runrecord")
    m.add_argument("--out", help="also write the metrics JSON here")
    m.add_argument("--full", action="store_true", help="include slot errors and CDF samples")
    m.set_defaults(func=cmd_metrics)

    li = sub.add_parser("linearize", help="power flow and sensitivity coefficients at given injections")
    li.add_argument("network", help="network JSON")
    li.add_argument("injections", help="CSV with columns bus,p_kw,q_kvar (injection positive)")
    li.add_argument("--out", help="write the JSON here instead of stdout")
    li.set_defaults(func=cmd_linearize)

    c = sub.add_parser("compare", help="side-by-side metrics of two run records")
    c.add_argument("run_a")
    c.add_argument("run_b")
    c.add_argument("--cdf", help="write both error CDFs as JSON here")
    c.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        name = exc.filename or (exc.args[0] if exc.args else "?")
        return _fail(EXIT_MISSING, f"no such file: {name}")
    except IsADirectoryError as exc:
        return _fail(EXIT_MALFORMED, f"{exc.filename}: is a directory")
    except (InputError, ScenarioError, harness.RunRecordError, NetworkError) as exc:
        return _fail(EXIT_MALFORMED, str(exc))
    except (harness.SimulationError, PowerFlowError, SingularJacobianError) as exc:
        return _fail(EXIT_SIMULATION, str(exc))


if __name__ == "__main__":
    sys.exit(main())
