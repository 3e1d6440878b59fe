"""Agent-based Monte Carlo counterpart of the fluid model.

Discrete vehicles follow a mean policy. Matching is a Bernoulli draw with the
meeting probability evaluated at the realized idle counts, and each station is
a real first-come-first-served queue with an integer number of spots. The
output is an empirical :class:`~eriver.flows.FlowField` in fleet units so it
can be compared with the fluid flows directly.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .flows import FlowField, extended_horizon
from .matching import meeting_probability
from .mdp import (CHARGE, CRUISE, STATION, STAY_OFFLINE, ZONE, Action, State, offline,
                  zone_state)
from .policy import MeanPolicy
from .scenario import ScenarioConfig, charge_steps
from .station_queue import IMMEDIATE, WaitDistribution

STAY = Action(STAY_OFFLINE)


class TraceStep(NamedTuple):
    state: State
    action: Action
    next: State
    reward: float
    went_offline: bool = False  # reward includes the offline penalty


@dataclass
class AgentTrace:
    vehicle: int
    steps: list[TraceStep] = field(default_factory=list)

    @property
    def total_reward(self) -> float:
        return float(sum(step.reward for step in self.steps))

    @property
    def penalties(self) -> int:
        return sum(step.went_offline for step in self.steps)


@dataclass
class EmpiricalFlowField(FlowField):
    """Empirical flows in fleet units; ``weight`` is fleet mass per simulated vehicle."""

    weight: float = 1.0
    num_vehicles: int = 0
    counts: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def vehicle_totals(self) -> np.ndarray:
        """Vehicles per step summed over compartments, in integer arithmetic."""
        return sum(self.counts.values())


def _station_spots(cfg: ScenarioConfig, num_vehicles: int) -> int:
    spots = cfg.station_capacity * num_vehicles / cfg.fleet_size
    if abs(spots - round(spots)) > 1e-9:
        raise ValueError(f"station capacity {cfg.station_capacity} does not scale to an integer "
                         f"for {num_vehicles} vehicles (fleet {cfg.fleet_size})")
    return int(round(spots))


def simulate_agents(policy: MeanPolicy, cfg: ScenarioConfig, num_vehicles: int, seed: int,
                    *, record_traces: bool = True) -> tuple[EmpiricalFlowField, list[AgentTrace]]:
    """Run ``num_vehicles`` discrete vehicles under ``policy``.

    Each vehicle stands for ``M / num_vehicles`` units of fluid mass, and the
    station capacity is scaled the same way (it must come out integral).
    """
    if num_vehicles < 1:
        raise ValueError("num_vehicles must be >= 1")
    errors = policy.validate(1e-9)
    if errors:
        raise ValueError("invalid policy: " + errors[0])
    T, N, L, B = cfg.horizon, cfg.num_zones, cfg.num_stations, cfg.battery_capacity
    xi, kappa = cfg.consumption, cfg.offline_penalty
    ext = extended_horizon(cfg)
    n = ext + 1
    weight = cfg.fleet_size / num_vehicles
    spots = _station_spots(cfg, num_vehicles)
    rng = np.random.default_rng(seed)

    x_zone = np.zeros((n, N, B + 1), dtype=np.int64)
    x_station = np.zeros((n, L), dtype=np.int64)
    y = np.zeros((T, N, B + 1), dtype=np.int64)
    z = np.zeros((ext, L, B + 1), dtype=np.int64)
    m = np.zeros((T, N))
    offline_in = np.zeros(n + 1, dtype=np.int64)
    d_service = np.zeros(n + 1, dtype=np.int64)
    d_travel = np.zeros(n + 1, dtype=np.int64)
    waiting = np.zeros((n, L), dtype=np.int64)
    charging = np.zeros((n, L), dtype=np.int64)
    waits = np.zeros((ext, L, ext), dtype=np.int64)  # [arrival t, station, omega]

    traces = [AgentTrace(v) for v in range(num_vehicles)]

    def log(v: int, s: State, a: Action, nxt: State, reward: float) -> int:
        if not record_traces:
            return -1
        lost = nxt.kind == "offline"
        if nxt.t > T:
            nxt = State(T, "terminal")
        traces[v].steps.append(TraceStep(s, a, nxt, reward, lost))
        return len(traces[v].steps) - 1

    # Pre-decision vehicles by step: lists of (vehicle, State).
    ready: dict[int, list[tuple[int, State]]] = defaultdict(list)
    # Station arrivals by step: lists of (vehicle, station, soc, trace index).
    arriving: dict[int, list[tuple[int, int, int, int]]] = defaultdict(list)
    queues = [deque() for _ in range(L)]
    busy_until: list[list[int]] = [[] for _ in range(L)]

    init = cfg.initial_distribution
    init_p = np.array([im.prob for im in init])
    for v, k in enumerate(rng.choice(len(init), size=num_vehicles, p=init_p / init_p.sum())):
        im = init[k]
        s = zone_state(0, im.index, im.soc) if im.location == ZONE else State(0, STATION, im.index, B)
        ready[0].append((v, s))

    def sample(s: State) -> Action:
        acts, p = policy.actions[s], policy.probs[s]
        k = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
        return acts[min(k, len(acts) - 1)]

    tz, ts, od = cfg.travel_time_zone, cfg.travel_time_station, cfg.od_shares
    for t in range(ext):
        cohort = ready.pop(t, [])
        for v, s in cohort:
            if s.kind == ZONE:
                x_zone[t, s.index, s.soc] += 1
            else:
                x_station[t, s.index] += 1

        if t < T:
            idle: list[list[tuple[int, State]]] = [[] for _ in range(N)]
            for v, s in cohort:
                if s.kind == ZONE and s.soc == 0:
                    offline_in[t + 1] += 1
                    log(v, s, STAY, offline(t + 1), kappa)
                    continue
                a = sample(s)
                if a.kind == CRUISE:
                    idle[a.target].append((v, s))
                    y[t, a.target, s.soc] += 1
                elif a.kind == CHARGE:
                    tau = int(ts[s.index, a.target])
                    soc = s.soc - xi * tau
                    d = charge_steps(soc, B, cfg.charge_rate)
                    k = log(v, s, a, State(t + tau, STATION, a.target, B), -float(cfg.charging_price[a.target]) * d)
                    arriving[t + tau].append((v, a.target, soc, k))
                    d_travel[t + 1] += 1
                    d_travel[t + tau] -= 1
                else:
                    raise ValueError(f"unexpected action {a} at {s}")

            for j in range(N):
                m[t, j] = meeting_probability(float(cfg.demand[t, j]), weight * len(idle[j]),
                                              cfg.matching_params(t, j))
                dests = np.flatnonzero(od[t, j])
                for v, s in idle[j]:
                    a = Action(CRUISE, j)
                    b = s.soc
                    if rng.random() >= m[t, j]:
                        if b - xi > 0:
                            nxt = zone_state(t + 1, j, b - xi)
                            ready[t + 1].append((v, nxt))
                            log(v, s, a, nxt, 0.0)
                        else:
                            offline_in[t + 1] += 1
                            log(v, s, a, offline(t + 1), kappa)
                        continue
                    alpha = od[t, j, dests]
                    kk = int(np.searchsorted(np.cumsum(alpha), rng.random() * alpha.sum(), side="right"))
                    k = int(dests[min(kk, len(dests) - 1)])
                    tau = int(tz[j, k])
                    left = b - xi * (1 + tau)
                    fare = float(cfg.fare[j, k])
                    if left < 0:
                        offline_in[t + 1] += 1
                        log(v, s, a, offline(t + 1), kappa)
                        continue
                    d_service[t + 1] += 1
                    d_service[t + 1 + tau] -= 1
                    if left > 0:
                        nxt = zone_state(t + 1 + tau, k, left)
                        ready[t + 1 + tau].append((v, nxt))
                        log(v, s, a, nxt, fare)
                    else:
                        offline_in[t + 1 + tau] += 1
                        log(v, s, a, offline(t + 1 + tau), fare + kappa)

        # Station queues: free spots at t, then FIFO admission of the queue.
        incoming = arriving.pop(t, [])
        order = rng.permutation(len(incoming)) if incoming else []
        for idx in order:
            v, l, soc, k = incoming[idx]
            z[t, l, soc] += 1
            queues[l].append((v, soc, k, t))
        for l in range(L):
            busy_until[l] = [u for u in busy_until[l] if u > t]
            while queues[l] and len(busy_until[l]) < spots:
                v, soc, k, t0 = queues[l].popleft()
                d = charge_steps(soc, B, cfg.charge_rate)
                waiting[t0:t, l] += 1
                charging[t:t + d, l] += 1
                waits[t0, l, t - t0] += 1
                busy_until[l].append(t + d)
                done = State(t + d, STATION, l, B)
                if record_traces:
                    step = traces[v].steps[k]
                    traces[v].steps[k] = step._replace(next=done if done.t <= T else State(T, "terminal"))
                ready[t + d].append((v, done))

    for l in range(L):
        # Vehicles still queued when the ledger ends wait out the horizon.
        for v, soc, k, t0 in queues[l]:
            waiting[t0:, l] += 1
            waits[t0, l, ext - 1 - t0] += 1
            if record_traces:
                traces[v].steps[k] = traces[v].steps[k]._replace(next=State(T, "terminal"))

    wait: list[list[WaitDistribution]] = []
    for t in range(ext):
        row = []
        for l in range(L):
            total = waits[t, l].sum()
            row.append(IMMEDIATE if total == 0 else
                       WaitDistribution(np.trim_zeros(waits[t, l] / total, "b")))
        wait.append(row)

    offline_cum = np.cumsum(offline_in)[:n]
    in_service = np.cumsum(d_service)[:n]
    to_station = np.cumsum(d_travel)[:n]
    occupancy = charging[:ext].astype(float)
    counts = {
        "predecision": x_zone[:T + 1].sum(axis=(1, 2)) + x_station[:T + 1].sum(axis=1),
        "in_service": in_service[:T + 1],
        "to_station": to_station[:T + 1],
        "waiting": waiting[:T + 1].sum(axis=1),
        "charging": charging[:T + 1].sum(axis=1),
        "offline": offline_cum[:T + 1],
    }
    flows = EmpiricalFlowField(
        horizon=T,
        fleet_size=cfg.fleet_size,
        x_zone=x_zone * weight,
        x_station=x_station * weight,
        y=y * weight,
        z=z * weight,
        m=m,
        demand=np.asarray(cfg.demand),
        wait=wait,
        offline=offline_cum * weight,
        in_service=in_service * weight,
        to_station=to_station * weight,
        waiting=waiting * weight,
        charging=charging * weight,
        occupancy=occupancy * weight,
        capacity=cfg.station_capacity,
        weight=weight,
        num_vehicles=num_vehicles,
        counts=counts,
    )
    return flows, traces if record_traces else []


def average_flows(runs: list[FlowField]) -> FlowField:
    """Element-wise mean of several empirical runs of the same scenario."""
    if not runs:
        raise ValueError("no runs to average")
    first = runs[0]

    def mean(attr: str) -> np.ndarray:
        return np.mean([getattr(r, attr) for r in runs], axis=0)

    return FlowField(
        horizon=first.horizon, fleet_size=first.fleet_size,
        x_zone=mean("x_zone"), x_station=mean("x_station"), y=mean("y"), z=mean("z"), m=mean("m"),
        demand=first.demand, wait=first.wait, offline=mean("offline"),
        in_service=mean("in_service"), to_station=mean("to_station"), waiting=mean("waiting"),
        charging=mean("charging"), occupancy=mean("occupancy"), capacity=first.capacity,
    )


@dataclass
class FlowComparison:
    """Per-step relative L1 deviations of empirical from fluid flows."""

    idle: np.ndarray  # zone-level idle supply, t < T
    idle_soc: np.ndarray  # idle supply by zone and SOC, t < T
    arrivals: np.ndarray  # station arrivals by station and SOC, t <= T
    offline: np.ndarray  # cumulative offline mass, t <= T

    def summary(self) -> dict[str, float]:
        return {name: float(getattr(self, name).max()) for name in ("idle", "idle_soc", "arrivals", "offline")}

    def rows(self) -> list[tuple[int, float, float, float, float]]:
        nan = float("nan")
        T = len(self.offline) - 1
        return [(t,
                 float(self.idle[t]) if t < len(self.idle) else nan,
                 float(self.idle_soc[t]) if t < len(self.idle_soc) else nan,
                 float(self.arrivals[t]), float(self.offline[t])) for t in range(T + 1)]


def _relative_l1(emp: np.ndarray, fluid: np.ndarray) -> np.ndarray:
    emp = emp.reshape(emp.shape[0], -1)
    fluid = fluid.reshape(fluid.shape[0], -1)
    return np.abs(emp - fluid).sum(axis=1) / np.maximum(np.abs(fluid).sum(axis=1), 1.0)


def compare_flows(empirical: FlowField, fluid: FlowField) -> FlowComparison:
    """``|emp - fluid|_1 / max(|fluid|_1, 1)`` per step for idle supply, arrivals and offline mass."""
    for attr in ("y", "z", "offline"):
        a, b = getattr(empirical, attr), getattr(fluid, attr)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch for {attr}: {a.shape} vs {b.shape}")
    T = fluid.horizon
    return FlowComparison(
        idle=_relative_l1(empirical.idle(), fluid.idle()),
        idle_soc=_relative_l1(empirical.y, fluid.y),
        arrivals=_relative_l1(empirical.z[:T + 1], fluid.z[:T + 1]),
        offline=_relative_l1(empirical.offline[:T + 1, None], fluid.offline[:T + 1, None]),
    )
