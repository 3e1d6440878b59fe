"""Command-line entry point: ``eriver solve | simulate | compare | probe-queue | inspect``.

Exit codes: 0 success (and convergence for ``solve``), 2 usage error,
3 scenario error, 4 solver stopped at ``--max-iter`` without converging.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .equilibrium import DEFAULT_CERTIFICATE, solve_mfe
from .flows import propagate_forward
from .scenario import (DEMAND_PROFILES, ScenarioConfig, ScenarioError, builtin_scenario, load_scenario,
                       validate)
from .simulation import average_flows, compare_flows, simulate_agents
from .station_queue import QueueLedger

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_NOT_CONVERGED = 0, 2, 3, 4

log = logging.getLogger("eriver")


def _scenario_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    src = p.add_mutually_exclusive_group(required=required)
    src.add_argument("--scenario", type=Path, help="scenario JSON document")
    src.add_argument("--builtin", choices=DEMAND_PROFILES, help="seven-zone benchmark with this demand profile")
    p.add_argument("--queue-avg-duration", action="store_true",
                   help="book station spots for the cohort's average charge duration")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--threads", type=int, default=0, help="worker threads (0 = auto); accepted for compatibility")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eriver", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="compute a mean-field equilibrium and export flows")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", type=Path)
    src.add_argument("--builtin", choices=DEMAND_PROFILES)
    src.add_argument("--manifest", type=Path, help="rerun the solve recorded in a manifest")
    p.add_argument("--queue-avg-duration", action="store_true")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--certificate", type=float, default=DEFAULT_CERTIFICATE,
                   help="value-gap threshold for marking the result an equilibrium")
    _common(p)

    p = sub.add_parser("simulate", help="Monte Carlo runs of a saved policy")
    p.add_argument("--run", type=Path, required=True, help="directory written by 'solve'")
    p.add_argument("--mc-vehicles", type=int, default=None, help="vehicles per run (default: fleet size)")
    p.add_argument("--mc-seeds", type=int, default=10)
    _common(p)

    p = sub.add_parser("compare", help="fluid versus seed-averaged Monte Carlo flows")
    p.add_argument("--run", type=Path, required=True, help="directory written by 'solve'")
    p.add_argument("--mc-vehicles", type=int, default=None)
    p.add_argument("--mc-seeds", type=int, default=10)
    _common(p)

    p = sub.add_parser("probe-queue", help="continuity sweeps of the fluid queue")
    p.add_argument("--capacity", type=float, default=5.0, help="free spots at every step before the sweep")
    p.add_argument("--duration", type=int, default=1, help="charge steps of the probed cohorts")
    p.add_argument("--z-max", type=float, default=15.0)
    p.add_argument("--h", type=float, default=1e-3, help="sweep resolution")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--steps", type=int, default=8, help="ledger steps to report")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("inspect", help="validate a scenario and print a report")
    _scenario_args(p)
    return parser


def _load(args) -> ScenarioConfig:
    cfg = load_scenario(args.scenario) if args.scenario else builtin_scenario(args.builtin)
    if getattr(args, "queue_avg_duration", False):
        cfg = cfg.replace(queue_avg_duration=True)
    return cfg


def cmd_solve(args) -> int:
    if args.manifest:
        doc, cfg = io.read_manifest(args.manifest)
        s = doc["settings"]
        tol, max_iter, seed, cert = s["tol"], s["max_iter"], doc["seed"], s["certificate"]
    else:
        cfg = _load(args)
        tol, max_iter, seed, cert = args.tol, args.max_iter, args.seed, args.certificate
    if not tol > 0 or max_iter < 1:
        print("eriver solve: --tol must be positive and --max-iter at least 1", file=sys.stderr)
        return EXIT_USAGE
    result = solve_mfe(cfg, tol=tol, max_iter=max_iter, seed=seed, certificate=cert)
    args.out.mkdir(parents=True, exist_ok=True)
    files = io.export_flows(result.flows, args.out)
    files.append(io.export_policy(result.policy, args.out))
    files.append(io.export_gaps(result.diagnostics, args.out))
    settings = {"tol": tol, "max_iter": max_iter, "certificate": cert, "threads": args.threads}
    io.write_manifest(args.out, command="solve", cfg=cfg, seed=seed, settings=settings, files=files,
                      diagnostics=result.diagnostics)
    d = result.diagnostics
    print(f"{cfg.name or 'scenario'}: {d.iterations} iterations, policy gap {d.final_policy_gap:.3e}, "
          f"value gap {d.final_value_gap:.3e} ({'equilibrium' if d.is_equilibrium else 'not certified'})")
    return EXIT_OK if d.converged else EXIT_NOT_CONVERGED


def _monte_carlo(args):
    doc, cfg = io.read_manifest(args.run)
    policy = io.read_policy(Path(args.run) / "policy.csv", cfg)
    vehicles = args.mc_vehicles or int(round(cfg.fleet_size))
    if vehicles < 1 or args.mc_seeds < 1:
        raise _Usage("--mc-vehicles and --mc-seeds must be positive")
    runs = [simulate_agents(policy, cfg, vehicles, args.seed + k, record_traces=False)[0]
            for k in range(args.mc_seeds)]
    return cfg, policy, vehicles, average_flows(runs)


class _Usage(Exception):
    pass


def cmd_simulate(args) -> int:
    cfg, _, vehicles, mean = _monte_carlo(args)
    files = io.export_flows(mean, args.out)
    io.write_manifest(args.out, command="simulate", cfg=cfg, seed=args.seed, files=files,
                      settings={"mc_vehicles": vehicles, "mc_seeds": args.mc_seeds, "run": str(args.run)})
    print(f"averaged {args.mc_seeds} runs of {vehicles} vehicles into {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg, policy, vehicles, mean = _monte_carlo(args)
    fluid = propagate_forward(policy, cfg)
    report = compare_flows(mean, fluid)
    args.out.mkdir(parents=True, exist_ok=True)
    path = io.write_table(args.out / "comparison.csv", ("t", "idle", "idle_soc", "arrivals", "offline"),
                          report.rows())
    io.write_manifest(args.out, command="compare", cfg=cfg, seed=args.seed, files=[path],
                      settings={"mc_vehicles": vehicles, "mc_seeds": args.mc_seeds, "run": str(args.run)},
                      extra={"summary": report.summary()})
    for name, value in report.summary().items():
        print(f"max relative L1 {name:>9}: {value:.4f}")
    return EXIT_OK


def probe_queue(capacity: float, duration: int, z_max: float, h: float, epsilon: float, steps: int):
    """Sweep tables for the two queue continuity probes.

    ``w_rows``: a single cohort of mass ``z`` arriving at an empty ledger with
    ``capacity`` spots; ``(z, omega, w)``. ``zeta_rows``: an earlier cohort of
    mass ``z`` books first, then a fixed later cohort of ``capacity`` arrives
    one step after; ``(z, step, free)`` after both admissions.
    """
    if h <= 0 or z_max <= 0:
        raise _Usage("--h and --z-max must be positive")
    grid = np.round(np.arange(0.0, z_max + h / 2, h), 12)
    durations = np.array([duration, duration])
    w_rows, zeta_rows = [], []
    for z in grid:
        led = QueueLedger(0, capacity, steps + 1, durations, epsilon)
        w = led.admit(0, np.array([z, 0.0]))
        w_rows.extend((float(z), omega, w[omega]) for omega in range(steps))
        led = QueueLedger(0, capacity, steps + 1, durations, epsilon)
        led.admit(0, np.array([z, 0.0]))
        led.admit(1, np.array([capacity, 0.0]))
        zeta_rows.extend((float(z), s, float(led.free[s])) for s in range(steps))
    return w_rows, zeta_rows


def lipschitz_estimate(rows: list[tuple], h: float) -> float:
    """Largest |difference| / h between successive grid points of each series."""
    series: dict[int, list[float]] = {}
    for _, k, v in rows:
        series.setdefault(k, []).append(v)
    return max(float(np.abs(np.diff(v)).max()) / h if len(v) > 1 else 0.0 for v in series.values())


def cmd_probe_queue(args) -> int:
    w_rows, zeta_rows = probe_queue(args.capacity, args.duration, args.z_max, args.h, args.epsilon, args.steps)
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_table(args.out / "probe_wait.csv", ("z", "omega", "w"), w_rows)
    io.write_table(args.out / "probe_free.csv", ("z_earlier", "step", "free"), zeta_rows)
    print(f"K(w) ~ {lipschitz_estimate(w_rows, args.h):.4g}, K(free) ~ {lipschitz_estimate(zeta_rows, args.h):.4g}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    cfg = _load(args)
    problems = validate(cfg, warn=False)
    print(f"name: {cfg.name or '-'}")
    print(f"zones {cfg.num_zones}, stations {cfg.num_stations}, horizon {cfg.horizon}, fleet {cfg.fleet_size:g}")
    print(f"battery {cfg.battery_capacity}, charge rate {cfg.charge_rate}, spots per station {cfg.station_capacity:g}")
    print(f"total demand {float(np.sum(cfg.demand)):g}, max charge duration {cfg.max_charge_duration}")
    for l in range(cfg.num_stations):
        zones = [i for i in range(cfg.num_zones) if l in cfg.boundary_stations[i]]
        print(f"station {cfg.station_labels[l]}: boundary zones {zones}")
    if problems:
        print("violations:")
        for v in problems:
            print(f"  - {v}")
        return EXIT_SCENARIO
    print("valid")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "compare": cmd_compare,
            "probe-queue": cmd_probe_queue, "inspect": cmd_inspect}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    threads = getattr(args, "threads", 0)
    if threads < 0:
        parser.error("--threads must be >= 0")
    if threads:
        os.environ.setdefault("OMP_NUM_THREADS", str(threads))
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        print(f"eriver: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except (FileNotFoundError, _Usage) as exc:
        print(f"eriver {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
