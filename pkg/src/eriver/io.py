"""Tabular export and import of runs.

Every table is a comma-separated file with a header row. Floats are written
with ``repr`` so they read back bit-for-bit. ``manifest.json`` records what is
needed to rerun a solve and the checksum of every file written next to it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .equilibrium import SolveDiagnostics
from .flows import FlowField
from .mdp import StateSpace
from .policy import MeanPolicy
from .scenario import ScenarioConfig, load_scenario, to_document
from .station_queue import WaitDistribution

MANIFEST = "manifest.json"

ZONE_COLUMNS = ("t", "zone", "soc", "idle_mass", "meeting_prob", "demand")
STATION_COLUMNS = ("t", "station", "soc", "arrivals", "occupancy", "free_spots", "wait_pmf")
SUMMARY_COLUMNS = ("t", "predecision", "in_service", "to_station", "waiting", "charging", "offline", "total")
NORMALIZED_COLUMNS = ("series", "index", "t", "value", "normalized")
LEDGER_COLUMNS = ("station", "t", "occupancy", "free")
GAP_COLUMNS = ("iteration", "step_size", "policy_gap", "policy_gap_raw", "value_gap", "conservation_error")
POLICY_COLUMNS = ("t", "kind", "index", "soc", "action", "prob")


def _cell(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_table(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"{path.name}: row of {len(row)} cells for {len(columns)} columns")
            out.writerow([_cell(v) for v in row])
    return path


def _parse(text: str) -> Any:
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def read_table(path: str | Path, columns: Sequence[str] | None = None) -> list[dict[str, Any]]:
    """Rows as dicts with numeric cells converted; checks the header if ``columns`` is given."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if columns is not None and tuple(header) != tuple(columns):
            raise ValueError(f"{path}: expected columns {list(columns)}, found {header}")
        return [dict(zip(header, map(_parse, row))) for row in reader]


def format_pmf(pmf: WaitDistribution) -> str:
    return ";".join(f"{w}:{p!r}" for w, p in pmf.support())


def parse_pmf(text: str) -> WaitDistribution:
    pairs = [item.split(":") for item in str(text).split(";") if item]
    size = max(int(w) for w, _ in pairs) + 1
    pmf = np.zeros(size)
    for w, p in pairs:
        pmf[int(w)] = float(p)
    return WaitDistribution(pmf)


def zone_rows(flows: FlowField) -> list[tuple]:
    T, N, soc_levels = flows.y.shape
    return [(t, i, b, float(flows.y[t, i, b]), float(flows.m[t, i]), float(flows.demand[t, i]))
            for t in range(T) for i in range(N) for b in range(1, soc_levels)]


def station_rows(flows: FlowField) -> list[tuple]:
    ext, L, soc_levels = flows.z.shape
    free = flows.free_spots()
    return [(t, l, b, float(flows.z[t, l, b]), float(flows.occupancy[t, l]), float(free[t, l]),
             format_pmf(flows.wait[t][l]))
            for t in range(ext) for l in range(L) for b in range(soc_levels)]


def summary_rows(flows: FlowField) -> list[tuple]:
    parts = flows.compartments()
    totals = flows.totals()
    return [(t, *(float(parts[k][t]) for k in SUMMARY_COLUMNS[1:-1]), float(totals[t]))
            for t in range(flows.horizon + 1)]


def normalized_rows(flows: FlowField) -> list[tuple]:
    """Zone idle supply and station arrivals, each series divided by its own maximum."""
    rows = []
    T = flows.horizon
    for name, series in (("zone_idle", flows.idle()), ("station_arrivals", flows.arrivals()[:T + 1])):
        for k in range(series.shape[1]):
            col = series[:, k]
            peak = col.max()
            for t, v in enumerate(col):
                rows.append((name, k, t, float(v), float(v / peak) if peak > 0 else 0.0))
    return rows


def ledger_rows(flows: FlowField) -> list[tuple]:
    free = flows.free_spots()
    ext, L = flows.occupancy.shape
    return [(l, t, float(flows.occupancy[t, l]), float(free[t, l])) for l in range(L) for t in range(ext)]


def export_flows(flows: FlowField, dest: str | Path) -> list[Path]:
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    return [
        write_table(dest / "zone_flows.csv", ZONE_COLUMNS, zone_rows(flows)),
        write_table(dest / "station_flows.csv", STATION_COLUMNS, station_rows(flows)),
        write_table(dest / "summary.csv", SUMMARY_COLUMNS, summary_rows(flows)),
        write_table(dest / "normalized_flows.csv", NORMALIZED_COLUMNS, normalized_rows(flows)),
        write_table(dest / "queue_ledgers.csv", LEDGER_COLUMNS, ledger_rows(flows)),
    ]


def export_policy(policy: MeanPolicy, dest: str | Path) -> Path:
    return write_table(Path(dest) / "policy.csv", POLICY_COLUMNS, policy.rows())


def read_policy(path: str | Path, cfg: ScenarioConfig) -> MeanPolicy:
    rows = read_table(path, POLICY_COLUMNS)
    return MeanPolicy.from_rows(StateSpace(cfg), ((r["t"], r["kind"], r["index"], r["soc"], r["action"], r["prob"])
                                                  for r in rows))


def export_gaps(diag: SolveDiagnostics, dest: str | Path) -> Path:
    # Wall times stay in the manifest so reruns give byte-identical tables.
    return write_table(Path(dest) / "gap_trace.csv", GAP_COLUMNS, diag.rows())


def read_zone_flows(path: str | Path, horizon: int, num_zones: int, battery: int):
    """``(y, m, demand)`` arrays rebuilt from a zone table."""
    y = np.zeros((horizon, num_zones, battery + 1))
    m = np.zeros((horizon, num_zones))
    q = np.zeros((horizon, num_zones))
    for r in read_table(path, ZONE_COLUMNS):
        y[r["t"], r["zone"], r["soc"]] = r["idle_mass"]
        m[r["t"], r["zone"]] = r["meeting_prob"]
        q[r["t"], r["zone"]] = r["demand"]
    return y, m, q


def read_station_flows(path: str | Path, ext_horizon: int, num_stations: int, battery: int):
    """``(z, occupancy, wait)`` rebuilt from a station table."""
    z = np.zeros((ext_horizon, num_stations, battery + 1))
    occ = np.zeros((ext_horizon, num_stations))
    wait: list[list[WaitDistribution | None]] = [[None] * num_stations for _ in range(ext_horizon)]
    for r in read_table(path, STATION_COLUMNS):
        t, l = r["t"], r["station"]
        z[t, l, r["soc"]] = r["arrivals"]
        occ[t, l] = r["occupancy"]
        wait[t][l] = parse_pmf(r["wait_pmf"])
    return z, occ, wait


def sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(dest: str | Path, *, command: str, cfg: ScenarioConfig, seed: int,
                   settings: dict[str, Any], files: Iterable[Path],
                   diagnostics: SolveDiagnostics | None = None, extra: dict[str, Any] | None = None) -> Path:
    dest = Path(dest)
    doc: dict[str, Any] = {
        "version": __version__,
        "command": command,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "seed": seed,
        "settings": settings,
        "scenario": to_document(cfg),
    }
    if diagnostics is not None:
        doc.update({
            "iterations": diagnostics.iterations,
            "converged": diagnostics.converged,
            "final_policy_gap": diagnostics.final_policy_gap,
            "final_value_gap": diagnostics.final_value_gap,
            "certificate_threshold": diagnostics.certificate_threshold,
            "is_equilibrium": diagnostics.is_equilibrium,
            "wall_time_s": diagnostics.wall_times[-1] if diagnostics.wall_times else 0.0,
            "wall_times_s": diagnostics.wall_times,
        })
    doc.update(extra or {})
    doc["files"] = {p.name: sha256(p) for p in sorted(files, key=lambda p: p.name)}
    path = dest / MANIFEST
    path.write_text(json.dumps(doc, indent=2, allow_nan=True) + "\n")
    return path


def read_manifest(path: str | Path) -> tuple[dict[str, Any], ScenarioConfig]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    doc = json.loads(path.read_text())
    return doc, load_scenario(doc["scenario"])
