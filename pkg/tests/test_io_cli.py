import json
import subprocess
import sys

import numpy as np
import pytest

from eriver import io
from eriver.cli import lipschitz_estimate, main, probe_queue
from eriver.flows import propagate_forward
from eriver.mdp import CRUISE, ZONE, Action, StateSpace
from eriver.policy import MeanPolicy
from eriver.scenario import dump_scenario
from oracles import toy_scenario


@pytest.fixture
def toy_file(tmp_path):
    path = tmp_path / "toy.json"
    dump_scenario(toy_scenario(3, capacity=4), path)
    return path


def test_tables_round_trip(uniform_cfg, tmp_path):
    flows = propagate_forward(MeanPolicy.random(StateSpace(uniform_cfg), 0), uniform_cfg)
    files = io.export_flows(flows, tmp_path)
    assert {p.name for p in files} == {"zone_flows.csv", "station_flows.csv", "summary.csv",
                                       "normalized_flows.csv", "queue_ledgers.csv"}
    y, m, q = io.read_zone_flows(tmp_path / "zone_flows.csv", 12, 7, 4)
    assert np.array_equal(y[:, :, 1:], flows.y[:, :, 1:])
    assert np.array_equal(m, flows.m) and np.array_equal(q, flows.demand)
    z, occ, wait = io.read_station_flows(tmp_path / "station_flows.csv", flows.ext_horizon, 6, 4)
    assert np.array_equal(z, flows.z) and np.array_equal(occ, flows.occupancy)
    assert all(np.array_equal(wait[t][l].pmf[wait[t][l].pmf > 0], flows.wait[t][l].pmf[flows.wait[t][l].pmf > 0])
               for t in range(flows.ext_horizon) for l in range(6))
    for row in io.read_table(tmp_path / "summary.csv", io.SUMMARY_COLUMNS):
        parts = sum(row[k] for k in io.SUMMARY_COLUMNS[1:-1])
        assert parts == pytest.approx(row["total"]) and row["total"] == pytest.approx(500, abs=5e-4)
    norm = io.read_table(tmp_path / "normalized_flows.csv", io.NORMALIZED_COLUMNS)
    assert max(r["normalized"] for r in norm) == 1.0 and min(r["normalized"] for r in norm) >= 0


def test_zero_demand_summary(uniform_cfg, tmp_path):
    cfg = uniform_cfg.replace(demand=np.zeros((12, 7)))
    policy = MeanPolicy.deterministic(StateSpace(cfg), lambda s, a: Action(CRUISE, s.index) if s.kind == ZONE
                                      else a[0])
    io.export_flows(propagate_forward(policy, cfg), tmp_path)
    rows = io.read_table(tmp_path / "summary.csv")
    assert [r["offline"] for r in rows] == pytest.approx([0.0] * 4 + [500.0] * 9, abs=1e-9)


def test_policy_round_trip(uniform_cfg, tmp_path):
    policy = MeanPolicy.random(StateSpace(uniform_cfg), 2)
    io.export_policy(policy, tmp_path)
    back = io.read_policy(tmp_path / "policy.csv", uniform_cfg)
    assert all(np.array_equal(policy.probs[s], back.probs[s]) for s in policy.actions)


def test_table_header_is_checked(tmp_path):
    io.write_table(tmp_path / "t.csv", ("a", "b"), [(1, 2.5)])
    assert io.read_table(tmp_path / "t.csv") == [{"a": 1, "b": 2.5}]
    with pytest.raises(ValueError):
        io.read_table(tmp_path / "t.csv", ("a", "c"))
    with pytest.raises(ValueError):
        io.write_table(tmp_path / "u.csv", ("a",), [(1, 2)])


def test_pmf_format():
    w = io.parse_pmf("0:0.25;3:0.75")
    assert w.pmf.tolist() == [0.25, 0, 0, 0.75]
    assert io.format_pmf(w) == "0:0.25;3:0.75"


def test_solve_writes_run_and_reruns_identically(toy_file, tmp_path, capsys):
    run = tmp_path / "run"
    code = main(["solve", "--scenario", str(toy_file), "--tol", "1e-12", "--max-iter", "15", "--seed", "3",
                 "--out", str(run)])
    assert code == 4  # stopped at --max-iter
    doc = json.loads((run / "manifest.json").read_text())
    assert doc["iterations"] == 15 and doc["converged"] is False and doc["seed"] == 3
    assert set(doc["files"]) == {"zone_flows.csv", "station_flows.csv", "summary.csv", "normalized_flows.csv",
                                 "queue_ledgers.csv", "policy.csv", "gap_trace.csv"}
    again = tmp_path / "again"
    assert main(["solve", "--manifest", str(run / "manifest.json"), "--out", str(again)]) == 4
    for name, digest in doc["files"].items():
        assert io.sha256(again / name) == digest, name
    assert len(io.read_table(run / "gap_trace.csv", io.GAP_COLUMNS)) == 15


def test_converged_solve_exits_zero(toy_file, tmp_path):
    assert main(["solve", "--scenario", str(toy_file), "--tol", "0.5", "--out", str(tmp_path)]) == 0


def test_usage_and_scenario_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--builtin", "uniform"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--builtin", "nowhere", "--out", str(tmp_path)])
    assert exc.value.code == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert main(["solve", "--scenario", str(bad), "--out", str(tmp_path / "x")]) == 3
    assert main(["inspect", "--scenario", str(tmp_path / "missing.json")]) == 3
    assert main(["solve", "--builtin", "uniform", "--tol", "-1", "--out", str(tmp_path)]) == 2


def test_simulate_and_compare(toy_file, tmp_path, capsys):
    run = tmp_path / "run"
    main(["solve", "--scenario", str(toy_file), "--max-iter", "5", "--out", str(run)])
    assert main(["simulate", "--run", str(run), "--mc-seeds", "2", "--out", str(tmp_path / "sim")]) == 0
    rows = io.read_table(tmp_path / "sim" / "summary.csv")
    assert all(r["total"] == pytest.approx(100) for r in rows)
    assert main(["compare", "--run", str(run), "--mc-seeds", "2", "--mc-vehicles", "200",
                 "--out", str(tmp_path / "cmp")]) == 0
    assert "max relative L1" in capsys.readouterr().out
    doc = json.loads((tmp_path / "cmp" / "manifest.json").read_text())
    assert set(doc["summary"]) == {"idle", "idle_soc", "arrivals", "offline"}
    assert main(["compare", "--run", str(run), "--mc-seeds", "0", "--out", str(tmp_path / "c2")]) == 2


def test_probe_queue_tables(tmp_path):
    assert main(["probe-queue", "--out", str(tmp_path)]) == 0
    wait = io.read_table(tmp_path / "probe_wait.csv", ("z", "omega", "w"))
    at_ten = [r["w"] for r in wait if r["z"] == 10.0]
    assert at_ten[:2] == pytest.approx([0.5, 0.5], abs=1e-6)
    free = io.read_table(tmp_path / "probe_free.csv", ("z_earlier", "step", "free"))
    assert free


def test_probe_sweeps_are_continuous():
    h = 1e-3
    w_rows, free_rows = probe_queue(5.0, 1, 15.0, h, 1e-6, 8)
    assert lipschitz_estimate(w_rows, h) < 1.0
    assert lipschitz_estimate(free_rows, h) <= 1.0 + 1e-6


def test_inspect_report(capsys):
    assert main(["inspect", "--builtin", "peak_offpeak"]) == 0
    out = capsys.readouterr().out
    assert "valid" in out and "station F" in out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "eriver", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "eriver" in out.stdout
