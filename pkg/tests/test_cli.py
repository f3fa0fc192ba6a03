import json
import os
import subprocess
import sys

import numpy as np
import pytest

from gridtrack.cli import main
from gridtrack.grid_model import linearize, load_network, solve_power_flow
from gridtrack.sim.scenario import bundled_dir

NETWORK = bundled_dir() / "day1" / "network.json"


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    assert main(["run", "day2", "--mode", "without-control", "--out", str(out)]) == 0
    assert main(["run", "day2", "--mode", "without-control", "--seed", "5", "--out", str(out / "s5")]) == 0
    return out


def test_run_writes_record_and_metrics(runs):
    rec = runs / "day2.without-control.runrecord.jsonl"
    met = json.loads((runs / "day2.without-control.metrics.json").read_text())
    assert rec.exists()
    assert met["schema"] == "gridtrack.metrics/1"
    assert met["rmse_kw"] > 0


def test_metrics_command(runs, capsys, tmp_path):
    rec = runs / "day2.without-control.runrecord.jsonl"
    assert main(["metrics", str(rec), "--out", str(tmp_path / "m.json")]) == 0
    shown = json.loads(capsys.readouterr().out)
    saved = json.loads((runs / "day2.without-control.metrics.json").read_text())
    assert shown["rmse_kw"] == saved["rmse_kw"]
    assert json.loads((tmp_path / "m.json").read_text())["mae_kw"] == saved["mae_kw"]


def test_compare_command(runs, capsys, tmp_path):
    a = runs / "day2.without-control.runrecord.jsonl"
    b = runs / "s5" / "day2.without-control.runrecord.jsonl"
    assert main(["compare", str(a), str(b), "--cdf", str(tmp_path / "cdf.json")]) == 0
    out = capsys.readouterr().out
    assert "RMSE" in out and "B/A" in out
    cdf = json.loads((tmp_path / "cdf.json").read_text())
    assert len(cdf["a"]["prob"]) == 288


def test_missing_file_exit_code(capsys, tmp_path):
    assert main(["metrics", str(tmp_path / "none.jsonl")]) == 2
    assert "none.jsonl" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "nothing")]) == 2
    assert main(["linearize", str(tmp_path / "n.json"), str(tmp_path / "i.csv")]) == 2


def test_malformed_runrecord(capsys, tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"type": "header", "schema": "gridtrack.runrecord/1", "plan_kw": []}\n{"type": \n')
    assert main(["metrics", str(p)]) == 1
    assert "bad.jsonl:2:" in capsys.readouterr().err


def test_linearize_matches_library(tmp_path, capsys):
    inj = tmp_path / "inj.csv"
    inj.write_text("bus,p_kw,q_kvar\nB03,-10,-2\nB05,4.5,0\n")
    assert main(["linearize", str(NETWORK), str(inj)]) == 0
    doc = json.loads(capsys.readouterr().out)
    net = load_network(NETWORK)
    p = np.zeros(len(net.pq_ids))
    q = np.zeros(len(net.pq_ids))
    p[net.pq_index("B03")], q[net.pq_index("B03")] = -10, -2
    p[net.pq_index("B05")] = 4.5
    lin = linearize(net, solve_power_flow(net, p, q))
    assert doc["schema"] == "gridtrack.linearization/1"
    assert np.allclose(doc["Av"], lin.Av) and np.allclose(doc["b0"], lin.b0)


@pytest.mark.parametrize(
    "body, msg",
    [
        ("bus,p_kw,q_kvar\nB03,1,0\nB99,1,0\n", "inj.csv:3: unknown bus 'B99'"),
        ("bus,p_kw,q_kvar\nB03,1,0\nB03,2,0\n", "inj.csv:3:"),
        ("bus,p_kw,q_kvar\nB03,x,0\n", "inj.csv:2:"),
        ("bus,p_kw,q_kvar\nB03,1\n", "inj.csv:2:"),
        ("bus,p_kw,q_kvar\nB03,nan,0\n", "inj.csv:2:"),
        ("bus,p,q\nB03,1,0\n", "inj.csv:1:"),
    ],
)
def test_malformed_injections(tmp_path, capsys, body, msg):
    inj = tmp_path / "inj.csv"
    inj.write_text(body)
    assert main(["linearize", str(NETWORK), str(inj)]) == 1
    assert msg in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "gridtrack", "metrics", str(tmp_path / "x.jsonl")],
                       capture_output=True, text=True)
    assert r.returncode == 2
    assert "gridtrack: error:" in r.stderr


def test_pure_python_fallback_selected_by_env():
    code = "from gridtrack.lp import simplex; print(simplex.KERNEL)"
    env = dict(os.environ, GRIDTRACK_PURE_PYTHON="1")
    r = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)
    assert r.stdout.strip() == "python"
